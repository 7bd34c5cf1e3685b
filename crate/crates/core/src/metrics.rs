//! Scalar diagnostics: subspace distances, coherence, closed forms and the
//! bound checks used by the experiments.

use crate::error::{invalid, Error, Result};
use crate::matcore::{eig_sym, OrthonormalBasis, SymMatrix};

/// `‖UUᵀ - VVᵀ‖`, the largest principal-angle sine between two subspaces.
pub fn sin_theta(u: &OrthonormalBasis, v: &OrthonormalBasis) -> Result<f64> {
    if u.p() != v.p() || u.r() != v.r() {
        return Err(invalid(format!(
            "basis shapes differ: {}x{} vs {}x{}",
            u.p(),
            u.r(),
            v.p(),
            v.r()
        )));
    }
    let diff = &u.projector() - &v.projector();
    Ok(diff.spectral_norm()?.clamp(0.0, 1.0))
}

/// `‖U‖²_{2,∞}`: the largest squared row norm, in `[r/p, 1]`.
pub fn coherence(u: &OrthonormalBasis) -> f64 {
    let cols = u.columns();
    (0..u.p())
        .map(|i| cols.row(i).norm_squared())
        .fold(0.0, f64::max)
}

/// `‖U‖_{2,∞}`: the largest row norm (square root of [`coherence`]).
pub fn two_to_infinity_norm(u: &OrthonormalBasis) -> f64 {
    coherence(u).sqrt()
}

/// Ledermann bound `φ(p) = (2p + 1 - √(8p + 1)) / 2`.
pub fn ledermann_bound(p: usize) -> f64 {
    let p = p as f64;
    (2.0 * p + 1.0 - (8.0 * p + 1.0).sqrt()) / 2.0
}

/// `|β_i| ≤ Σ_{j≠i} |β_j|` for every `i`.
pub fn is_balanced(beta: &[f64]) -> Result<bool> {
    if beta.iter().all(|&b| b == 0.0) {
        return Err(invalid("balance is undefined for the zero vector"));
    }
    let total: f64 = beta.iter().map(|b| b.abs()).sum();
    Ok(beta.iter().all(|b| b.abs() <= total - b.abs()))
}

/// `eᵀLe / eᵀΣe` with `e` the all-ones vector.
pub fn reliability_coefficient(l: &SymMatrix, sigma: &SymMatrix) -> Result<f64> {
    let denom = sigma.sum_of_entries();
    if !(denom > 0.0) {
        return Err(invalid(format!("eᵀΣe must be positive, got {denom}")));
    }
    Ok(l.sum_of_entries() / denom)
}

/// `ψ = ‖Σ - (L + D)‖_F²`.
pub fn psi_residual(sigma: &SymMatrix, l: &SymMatrix, d: &SymMatrix) -> Result<f64> {
    if sigma.dim() != l.dim() || sigma.dim() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: if sigma.dim() != l.dim() { l.dim() } else { d.dim() },
        });
    }
    Ok((&(sigma - l) - d).frobenius_norm_sq())
}

/// Heywood case: some `D_ii ≤ 0`. A zero variance counts as improper.
pub fn heywood_check(d: &SymMatrix) -> bool {
    d.diagonal().iter().any(|&x| x <= 0.0)
}

/// Sine distance between `β` and the top eigenvector of
/// `s·ββᵀ + ηηᵀ` (unit-norm `β`, coordinate vector `η`, `q = βᵀη`):
/// `[1 + 4q²(1 - q²) / (1 - s - 2q² + √((1 - s)² + 4sq²))²]^{-1/2}` for
/// `q ≠ 0`, and `1(s < 1)` for `q = 0`.
pub fn spike_pca_sin_theta(q: f64, s: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("q must lie in [0, 1), got {q}")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("s must be positive, got {s}")));
    }
    if q == 0.0 {
        return Ok(if s < 1.0 { 1.0 } else { 0.0 });
    }
    let q2 = q * q;
    let root = ((1.0 - s).powi(2) + 4.0 * s * q2).sqrt();
    let lead = s - 1.0 + 2.0 * q2;
    // (root - lead)(root + lead) = 4q²(1 - q²); use whichever factor avoids cancellation
    let ratio = if lead > 0.0 {
        (lead + root).powi(2) / (4.0 * q2 * (1.0 - q2))
    } else {
        let denom = root - lead;
        if denom == 0.0 {
            return Err(Error::Domain(format!("denominator vanishes at q={q}, s={s}")));
        }
        4.0 * q2 * (1.0 - q2) / (denom * denom)
    };
    Ok((1.0 + ratio).powf(-0.5))
}

/// The event under which the subspace bound holds, with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinThetaEvent {
    /// `3‖U‖_{2,∞}`
    pub coherence_term: f64,
    /// `(τ + ‖poffdiag(W)‖) / λ_r`
    pub noise_term: f64,
    pub rho: f64,
    pub holds: bool,
    /// `2(1 - ϱ)⁻¹ · noise_term`
    pub bound: f64,
}

pub fn sin_theta_event(
    u: &OrthonormalBasis,
    w: &SymMatrix,
    tau: f64,
    lambda_r: f64,
    rho: f64,
) -> Result<SinThetaEvent> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(lambda_r > 0.0) {
        return Err(invalid(format!("lambda_r must be positive, got {lambda_r}")));
    }
    if !(tau >= 0.0) {
        return Err(invalid(format!("tau must be >= 0, got {tau}")));
    }
    if w.dim() != u.p() {
        return Err(Error::DimensionMismatch {
            expected: u.p(),
            found: w.dim(),
        });
    }
    let coherence_term = 3.0 * two_to_infinity_norm(u);
    let noise_term = (tau + w.poffdiag().spectral_norm()?) / lambda_r;
    let bound = 2.0 / (1.0 - rho) * noise_term;
    let lhs = coherence_term + bound;
    Ok(SinThetaEvent {
        coherence_term,
        noise_term,
        rho,
        holds: 0.0 < lhs && lhs < rho,
        bound,
    })
}

/// Smallest eigenvalue; convenience for PSD checks.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(*eig_sym(m)?.values.last().expect("non-empty matrix"))
}
