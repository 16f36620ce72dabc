use serde::Serialize;

use super::{DiscreteSystem, SolutionPair};
use crate::transform::{CurvilinearGrid, NodeTag};

/// Weak residuals of the computed pair against interior hat functions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Normalisation: largest row sum of absolute contributions.
    pub scale: f64,
    /// `max |(Ku)_k + L_k(χ)| / scale` over interior rows away from the interface band.
    pub equation_max: f64,
    /// Same, over all interior rows.
    pub equation_max_all: f64,
    /// Width of the excluded band, in cells.
    pub band_cells: usize,
    pub rows_checked: usize,
    /// `min S_k / scale` with `S_k = ∫ χ h ∂tφ_k + ∫ 1_{u>θ} ∂t(h) φ_k`; must be ≥ 0.
    pub sign_min: f64,
    /// `min ((Ku)_k + L_k(χ) - B_k(u)) / scale` over Dirichlet rows.
    pub dirichlet_min: f64,
}

pub fn residuals(pair: &SolutionPair, sys: &DiscreteSystem, grid: &CurvilinearGrid) -> ResidualReport {
    const BAND: usize = 3;
    let n = sys.len();
    let wet: Vec<bool> = pair.chi.iter().zip(&pair.u).map(|(c, u)| *u > pair.theta_tol || *c == 1.0).collect();
    // wet Dirichlet nodes sit on the closure of {u > 0}
    let indicator: Vec<f64> = (0..n)
        .map(|k| {
            let on = pair.u[k] > pair.theta_tol || (sys.tags[k] == NodeTag::Dirichlet && pair.chi[k] == 1.0);
            if on { 1.0 } else { 0.0 }
        })
        .collect();
    let abs_u: Vec<f64> = pair.u.iter().map(|u| u.abs()).collect();
    let abs_st: Vec<[f64; 9]> = sys.stiffness.iter().map(|r| r.map(f64::abs)).collect();

    let near_interface = |k: usize| {
        let (i, j) = ((k / grid.n_s) as isize, (k % grid.n_s) as isize);
        let b = BAND as isize;
        for di in -b..=b {
            for dj in -b..=b {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= grid.n_w as isize || nj >= grid.n_s as isize {
                    continue;
                }
                if wet[ni as usize * grid.n_s + nj as usize] != wet[k] {
                    return true;
                }
            }
        }
        false
    };

    let mut scale: f64 = 0.0;
    for k in 0..n {
        if sys.tags[k] == NodeTag::Dirichlet {
            continue;
        }
        scale = scale.max(sys.apply(&abs_st, k, &abs_u) + sys.apply(&sys.load_abs, k, &pair.chi));
    }
    let scale = scale.max(1e-300);

    let (mut eq, mut eq_all, mut sign_min, mut rows) = (0.0f64, 0.0f64, f64::INFINITY, 0);
    let mut dir_min = f64::INFINITY;
    for k in 0..n {
        let r = sys.stiffness_times(k, &pair.u) + sys.load_row(k, &pair.chi);
        match sys.tags[k] {
            NodeTag::Interior => {
                eq_all = eq_all.max(r.abs());
                if !near_interface(k) {
                    eq = eq.max(r.abs());
                    rows += 1;
                }
                let s = sys.load_row(k, &pair.chi) + sys.apply(&sys.source, k, &indicator);
                sign_min = sign_min.min(s);
            }
            NodeTag::Dirichlet => dir_min = dir_min.min(r),
            _ => {}
        }
    }
    let rel = |v: f64| if v.is_finite() { v / scale } else { 0.0 };
    ResidualReport {
        scale,
        equation_max: eq / scale,
        equation_max_all: eq_all / scale,
        band_cells: BAND,
        rows_checked: rows,
        sign_min: rel(sign_min),
        dirichlet_min: rel(dir_min),
    }
}
