//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step with its dense-output coefficients.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    /// Signed step size.
    pub h: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> Step<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn y0(&self) -> [f64; N] {
        self.rcont[0]
    }

    pub fn y1(&self) -> [f64; N] {
        self.eval_theta(1.0)
    }

    /// `θ ∈ [0, 1]` measured from `t0` towards `t0 + h`.
    pub fn eval_theta(&self, th: f64) -> [f64; N] {
        let r = &self.rcont;
        let th1 = 1.0 - th;
        std::array::from_fn(|i| r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i]))))
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        self.eval_theta(((t - self.t0) / self.h).clamp(0.0, 1.0))
    }

    #[cfg(test)]
    pub fn covers(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        a <= t && t <= b
    }
}

pub struct Attempt<const N: usize> {
    pub y1: [f64; N],
    /// Derivative at the end point, reused as the next first stage.
    pub k7: [f64; N],
    /// Scaled error norm; the step is acceptable when `≤ 1`.
    pub err: f64,
    pub step: Step<N>,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, coef: &[f64], k: &[[f64; N]]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * coef.iter().zip(k).map(|(c, kj)| c * kj[i]).sum::<f64>())
}

/// Single Dormand–Prince step of size `h` from `(t0, y0)` with `k1 = f(t0, y0)`.
pub fn attempt<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t0: f64,
    y0: &[f64; N],
    k1: &[f64; N],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<Attempt<N>, E> {
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    k[1] = f(t0 + C[1] * h, &axpy(y0, h, &A2, &k[..1]))?;
    k[2] = f(t0 + C[2] * h, &axpy(y0, h, &A3, &k[..2]))?;
    k[3] = f(t0 + C[3] * h, &axpy(y0, h, &A4, &k[..3]))?;
    k[4] = f(t0 + C[4] * h, &axpy(y0, h, &A5, &k[..4]))?;
    k[5] = f(t0 + C[5] * h, &axpy(y0, h, &A6, &k[..5]))?;
    let y1 = axpy(y0, h, &B, &k[..6]);
    k[6] = f(t0 + h, &y1)?;

    let mut acc = 0.0;
    for i in 0..N {
        let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        acc += (e / sc).powi(2);
    }
    let err = (acc / N as f64).sqrt();

    let ydiff: [f64; N] = std::array::from_fn(|i| y1[i] - y0[i]);
    let bspl: [f64; N] = std::array::from_fn(|i| h * k[0][i] - ydiff[i]);
    let rcont = [
        *y0,
        ydiff,
        bspl,
        std::array::from_fn(|i| ydiff[i] - h * k[6][i] - bspl[i]),
        std::array::from_fn(|i| h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>()),
    ];
    Ok(Attempt {
        y1,
        k7: k[6],
        err,
        step: Step { t0, h, rcont },
    })
}

/// Step-size factor after an attempt with error norm `err`.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RkError<E> {
    #[error("step size underflow at t = {0}")]
    Underflow(f64),
    #[error("step limit reached at t = {0}")]
    StepLimit(f64),
    #[error(transparent)]
    Rhs(E),
}

/// Integrates from `t0` to `t1` (either direction) without event handling.
pub fn integrate<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    rtol: f64,
    atol: f64,
    max_step: f64,
) -> Result<[f64; N], RkError<E>> {
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok(y0);
    }
    let (mut t, mut y) = (t0, y0);
    let mut k1 = f(t, &y).map_err(RkError::Rhs)?;
    let mut h = span.min(max_step).min(0.01 * span.max(1e-3)).max(1e-8 * span);
    for _ in 0..1_000_000 {
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        let hs = dir * if last { remaining } else { h };
        let a = attempt(f, t, &y, &k1, hs, rtol, atol).map_err(RkError::Rhs)?;
        if a.err <= 1.0 {
            if last {
                return Ok(a.y1);
            }
            t += hs;
            y = a.y1;
            k1 = a.k7;
        }
        h = (h * step_factor(a.err)).min(max_step);
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(RkError::Underflow(t));
        }
    }
    Err(RkError::StepLimit(t))
}
