//! Spectral proximal maps used as the `L`-update of the alternating solvers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matcore::{eig_sym, EigenDecomp, SymMatrix};

/// Which proximal map to apply to `Σ - D` in the alternating engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxSpec {
    /// Eigenvalue soft-thresholding with PSD clipping, `D_τ⁺`.
    PsdSoft { tau: f64 },
    /// Signed eigenvalue soft-thresholding, `D_τ`.
    SymSoft { tau: f64 },
    /// Frobenius-optimal rank-`r` symmetric approximation.
    RankR { r: usize },
    /// Frobenius-optimal rank-`r` PSD approximation.
    RankRPsd { r: usize },
}

impl ProxSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            ProxSpec::PsdSoft { tau } | ProxSpec::SymSoft { tau } => check_tau(tau),
            ProxSpec::RankR { r } | ProxSpec::RankRPsd { r } => check_rank(r, p),
        }
    }

    /// Penalty `Π(L)` whose proximal map this is. Rank-constrained maps are
    /// indicator penalties, taken as zero on their feasible set.
    pub fn penalty(&self, l: &SymMatrix) -> Result<f64> {
        match *self {
            ProxSpec::PsdSoft { tau } | ProxSpec::SymSoft { tau } => {
                Ok(if tau == 0.0 { 0.0 } else { tau * l.nuclear_norm()? })
            }
            ProxSpec::RankR { .. } | ProxSpec::RankRPsd { .. } => Ok(0.0),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("threshold must be finite and >= 0, got {tau}")))
    }
}

fn check_rank(r: usize, p: usize) -> Result<()> {
    if (1..=p).contains(&r) {
        Ok(())
    } else {
        Err(invalid(format!("rank must satisfy 1 <= r <= {p}, got {r}")))
    }
}

/// `Σ_i (λ_i - τ)_+ u_i u_iᵀ`: the proximal map of `τ‖·‖_*` restricted to
/// PSD matrices.
pub fn soft_threshold_psd(m: &SymMatrix, tau: f64) -> Result<SymMatrix> {
    check_tau(tau)?;
    Ok(soft_threshold_psd_eig(&eig_sym(m)?, tau))
}

pub(crate) fn soft_threshold_psd_eig(e: &EigenDecomp, tau: f64) -> SymMatrix {
    e.map_spectrum(|l| (l - tau).max(0.0))
}

/// `Σ_i sign(λ_i)(|λ_i| - τ)_+ u_i u_iᵀ`.
pub fn soft_threshold_sym(m: &SymMatrix, tau: f64) -> Result<SymMatrix> {
    check_tau(tau)?;
    let e = eig_sym(m)?;
    Ok(e.map_spectrum(|l| l.signum() * (l.abs() - tau).max(0.0)))
}

/// Indices of the `r` eigenvalues of largest magnitude. Ties keep the
/// earlier (larger signed) index.
pub(crate) fn top_by_magnitude(values: &[f64], r: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()));
    idx.truncate(r);
    idx
}

/// Best rank-`r` approximation of a symmetric (possibly indefinite) matrix
/// in Frobenius norm: keeps the `r` eigenvalues of largest magnitude.
pub fn best_rank_r(m: &SymMatrix, r: usize) -> Result<SymMatrix> {
    check_rank(r, m.dim())?;
    let e = eig_sym(m)?;
    let keep = top_by_magnitude(&e.values, r);
    let mut w = vec![0.0; e.values.len()];
    for k in keep {
        w[k] = e.values[k];
    }
    Ok(e.weighted_sum(&w))
}

/// Best PSD approximation of rank at most `r`: the `r` largest signed
/// eigenvalues, clipped at zero.
pub fn best_rank_r_psd(m: &SymMatrix, r: usize) -> Result<SymMatrix> {
    check_rank(r, m.dim())?;
    let e = eig_sym(m)?;
    let w: Vec<f64> = e
        .values
        .iter()
        .enumerate()
        .map(|(k, &l)| if k < r { l.max(0.0) } else { 0.0 })
        .collect();
    Ok(e.weighted_sum(&w))
}

pub fn apply_prox(spec: ProxSpec, m: &SymMatrix) -> Result<SymMatrix> {
    spec.validate(m.dim())?;
    match spec {
        ProxSpec::PsdSoft { tau } => soft_threshold_psd(m, tau),
        ProxSpec::SymSoft { tau } => soft_threshold_sym(m, tau),
        ProxSpec::RankR { r } => best_rank_r(m, r),
        ProxSpec::RankRPsd { r } => best_rank_r_psd(m, r),
    }
}
