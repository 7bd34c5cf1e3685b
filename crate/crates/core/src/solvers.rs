//! Covariance decompositions `Σ ≈ L + D` by alternating minimization, and
//! the heteroskedastic PCA baselines compared against it.
//!
//! Every iterative method except the HeteroPCA family is an instance of one
//! engine: `L ← prox(Σ - D)`, `D ← pdiag(Σ - L)`. HeteroPCA is implemented
//! separately in its own `G`-update form so that its equivalence with the
//! rank-constrained engine can be checked rather than assumed.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcore::{eig_sym, OrthonormalBasis, SymMatrix};
use crate::shrinkage::{best_rank_r, soft_threshold_psd, soft_threshold_sym, top_by_magnitude, ProxSpec};

/// Iteration count used by HeteroPCA, HPCA+ and each Deflated-HeteroPCA stage.
pub const DEFAULT_T_MAX: usize = 30;
/// Relative eigenvalue cutoff for numerical rank.
pub const RANK_REL_CUTOFF: f64 = 1e-8;
/// Relative slack allowed when checking that the objective never increases.
pub const DESCENT_REL_SLACK: f64 = 1e-12;

/// The seven decomposition methods compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Svd,
    Dd,
    Hpca,
    Dhpca,
    HpcaPlus,
    Rmtfa,
    Si,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Svd,
        Method::Dd,
        Method::Hpca,
        Method::Dhpca,
        Method::HpcaPlus,
        Method::Rmtfa,
        Method::Si,
    ];

    /// Tag used in configs, CLI flags and result files.
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Svd => "svd",
            Method::Dd => "dd",
            Method::Hpca => "hpca",
            Method::Dhpca => "dhpca",
            Method::HpcaPlus => "hpca_plus",
            Method::Rmtfa => "rmtfa",
            Method::Si => "si",
        }
    }

    /// Display acronym.
    pub fn acronym(&self) -> &'static str {
        match self {
            Method::Svd => "SVD",
            Method::Dd => "DD",
            Method::Hpca => "HPCA",
            Method::Dhpca => "DHPCA",
            Method::HpcaPlus => "HPCA+",
            Method::Rmtfa => "rMTFA",
            Method::Si => "SI",
        }
    }

    /// Whether the method is controlled by a threshold `τ` (else a rank `r`).
    pub fn uses_tau(&self) -> bool {
        matches!(self, Method::Rmtfa | Method::Si)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.tag() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Tau(f64),
    Rank(usize),
}

/// Stopping rule for the alternating engine: stop once
/// `‖L⁽ᵏ⁾ - L⁽ᵏ⁻¹⁾‖_F ≤ rel_tol · max(1, ‖L⁽ᵏ⁻¹⁾‖_F)` or after `max_iter` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            rel_tol: 1e-10,
            max_iter: 1000,
        }
    }
}

impl StopRule {
    pub fn new(rel_tol: f64, max_iter: usize) -> Result<Self> {
        let rule = StopRule { rel_tol, max_iter };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(invalid(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    /// `Π(L⁽ᵏ⁾) + ½‖Σ - (L⁽ᵏ⁾ + D⁽ᵏ⁾)‖_F²`
    pub objective: f64,
    /// `‖L⁽ᵏ⁾ - L⁽ᵏ⁻¹⁾‖_F`, with `L⁽⁰⁾ = 0`.
    pub fixed_point_residual: f64,
    /// `‖poffdiag(Σ - L⁽ᵏ⁾)‖_F²`
    pub psi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolverTrace {
    /// Iterations `k` at which the objective rose above its previous value
    /// by more than [`DESCENT_REL_SLACK`] (relative).
    pub fn descent_violations(&self) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].objective > w[0].objective + DESCENT_REL_SLACK * w[0].objective.abs().max(1.0))
            .map(|w| w[1].k)
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.descent_violations().is_empty()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    fn post_check(&self, what: &str) {
        let bad = self.descent_violations();
        if !bad.is_empty() {
            warn!("{what}: objective increased at iterations {bad:?}");
        }
    }
}

/// A solution pair `(L, D)` with `L` PSD and `D` diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub l: SymMatrix,
    pub d: SymMatrix,
    pub control: Control,
    pub method: Method,
}

impl Decomposition {
    pub fn objective(&self, sigma: &SymMatrix) -> Result<f64> {
        let tau = match self.control {
            Control::Tau(t) => t,
            Control::Rank(_) => 0.0,
        };
        objective_f(sigma, &self.l, &self.d, tau)
    }
}

/// Output of the generic engine: `L` need not be PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingOutput {
    pub l: SymMatrix,
    pub d: SymMatrix,
    pub trace: SolverTrace,
}

fn check_same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

fn check_rank(r: usize, p: usize) -> Result<()> {
    if (1..=p).contains(&r) {
        Ok(())
    } else {
        Err(invalid(format!("rank must satisfy 1 <= r <= {p}, got {r}")))
    }
}

/// Proximal step returning the new `L` and its penalty value, computed from
/// the same eigendecomposition.
fn prox_step(spec: ProxSpec, m: &SymMatrix) -> Result<(SymMatrix, f64)> {
    let e = eig_sym(m)?;
    let (weights, penalty): (Vec<f64>, f64) = match spec {
        ProxSpec::PsdSoft { tau } => {
            let w: Vec<f64> = e.values.iter().map(|&l| (l - tau).max(0.0)).collect();
            let pen = tau * w.iter().sum::<f64>();
            (w, pen)
        }
        ProxSpec::SymSoft { tau } => {
            let w: Vec<f64> = e
                .values
                .iter()
                .map(|&l| l.signum() * (l.abs() - tau).max(0.0))
                .collect();
            let pen = tau * w.iter().map(|x| x.abs()).sum::<f64>();
            (w, pen)
        }
        ProxSpec::RankR { r } => {
            let mut w = vec![0.0; e.values.len()];
            for k in top_by_magnitude(&e.values, r) {
                w[k] = e.values[k];
            }
            (w, 0.0)
        }
        ProxSpec::RankRPsd { r } => {
            let w = e
                .values
                .iter()
                .enumerate()
                .map(|(k, &l)| if k < r { l.max(0.0) } else { 0.0 })
                .collect();
            (w, 0.0)
        }
    };
    Ok((e.weighted_sum(&weights), penalty))
}

/// Generic alternating minimization: `L⁽ᵏ⁾ = prox(Σ - D⁽ᵏ⁻¹⁾)`,
/// `D⁽ᵏ⁾ = pdiag(Σ - L⁽ᵏ⁾)`.
///
/// Returns the last iterate with `converged = false` if `max_iter` is hit.
pub fn alternating_solve(
    sigma: &SymMatrix,
    prox: ProxSpec,
    d0: &SymMatrix,
    stop: StopRule,
) -> Result<AlternatingOutput> {
    alternating_solve_with(sigma, prox, d0, stop, |_, _, _| {})
}

/// [`alternating_solve`] with an observer called as `(k, L⁽ᵏ⁾, D⁽ᵏ⁾)` after
/// every iteration.
pub fn alternating_solve_with(
    sigma: &SymMatrix,
    prox: ProxSpec,
    d0: &SymMatrix,
    stop: StopRule,
    observer: impl FnMut(usize, &SymMatrix, &SymMatrix),
) -> Result<AlternatingOutput> {
    stop.validate()?;
    run_alternating(sigma, prox, d0, Some(stop.rel_tol), stop.max_iter, observer)
}

fn run_alternating(
    sigma: &SymMatrix,
    prox: ProxSpec,
    d0: &SymMatrix,
    rel_tol: Option<f64>,
    max_iter: usize,
    mut observer: impl FnMut(usize, &SymMatrix, &SymMatrix),
) -> Result<AlternatingOutput> {
    let p = sigma.dim();
    check_same_dim(sigma, d0)?;
    if !d0.is_diagonal() {
        return Err(invalid("initial D must be diagonal"));
    }
    prox.validate(p)?;

    if sigma.is_zero() {
        return Ok(AlternatingOutput {
            l: SymMatrix::zeros(p),
            d: SymMatrix::zeros(p),
            trace: SolverTrace {
                records: Vec::new(),
                converged: true,
                iterations: 0,
            },
        });
    }

    let offdiag = sigma.poffdiag();
    let mut l_prev = SymMatrix::zeros(p);
    let mut d = d0.clone();
    let mut trace = SolverTrace::default();
    for k in 1..=max_iter {
        let (l, penalty) = prox_step(prox, &(sigma - &d))?;
        let d_next = (sigma - &l).pdiag();
        let psi = (&offdiag - &l.poffdiag()).frobenius_norm_sq();
        // with D = pdiag(Σ - L) the residual Σ - L - D is exactly poffdiag(Σ - L)
        let change = (&l - &l_prev).frobenius_norm();
        trace.records.push(IterRecord {
            k,
            objective: penalty + 0.5 * psi,
            fixed_point_residual: change,
            psi,
        });
        trace.iterations = k;
        observer(k, &l, &d_next);

        let settled = match rel_tol {
            Some(tol) => change <= tol * l_prev.frobenius_norm().max(1.0) && (k > 1 || d_next == d),
            None => false,
        };
        d = d_next;
        l_prev = l;
        if settled {
            trace.converged = true;
            break;
        }
    }
    if rel_tol.is_none() {
        trace.converged = true;
    }
    trace.post_check("alternating solve");
    Ok(AlternatingOutput {
        l: l_prev,
        d,
        trace,
    })
}

fn check_tau_positive(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("tau must be > 0, got {tau}")))
    }
}

/// Relaxed minimum trace factor analysis:
/// `min τ‖L‖_* + ½‖Σ - (L + D)‖_F²` over PSD `L` and diagonal `D`,
/// started from `D⁽⁰⁾ = pdiag(Σ)`.
pub fn rmtfa(sigma: &SymMatrix, tau: f64, stop: StopRule) -> Result<(Decomposition, SolverTrace)> {
    rmtfa_warm(sigma, tau, &sigma.pdiag(), stop)
}

/// [`rmtfa`] from an arbitrary diagonal starting point.
pub fn rmtfa_warm(
    sigma: &SymMatrix,
    tau: f64,
    d0: &SymMatrix,
    stop: StopRule,
) -> Result<(Decomposition, SolverTrace)> {
    check_tau_positive(tau)?;
    let out = alternating_solve(sigma, ProxSpec::PsdSoft { tau }, d0, stop)?;
    Ok((
        Decomposition {
            l: out.l,
            d: out.d,
            control: Control::Tau(tau),
            method: Method::Rmtfa,
        },
        out.trace,
    ))
}

/// Continuation over a decreasing ladder of thresholds; each rung starts
/// from the previous rung's `D`. Returns the final decomposition and one
/// trace per rung.
pub fn rmtfa_path(
    sigma: &SymMatrix,
    taus: &[f64],
    stop: StopRule,
) -> Result<(Decomposition, Vec<SolverTrace>)> {
    let mut d = sigma.pdiag();
    let mut traces = Vec::with_capacity(taus.len());
    let mut last = None;
    for &tau in taus {
        let (dec, trace) = rmtfa_warm(sigma, tau, &d, stop)?;
        d = dec.d.clone();
        traces.push(trace);
        last = Some(dec);
    }
    let dec = last.ok_or_else(|| invalid("empty threshold ladder"))?;
    Ok((dec, traces))
}

/// `‖L - D_τ⁺(poffdiag(Σ) + pdiag(L))‖_F`; zero exactly at the relaxed MTFA solution.
pub fn rmtfa_fixed_point_residual(sigma: &SymMatrix, l: &SymMatrix, tau: f64) -> Result<f64> {
    let mapped = soft_threshold_psd(&sigma.with_diagonal_of(l), tau)?;
    Ok((l - &mapped).frobenius_norm())
}

/// Soft-Impute on the diagonal: the engine with signed soft-thresholding.
pub fn soft_impute_diag(sigma: &SymMatrix, tau: f64, stop: StopRule) -> Result<AlternatingOutput> {
    check_tau_positive(tau)?;
    alternating_solve(sigma, ProxSpec::SymSoft { tau }, &sigma.pdiag(), stop)
}

/// `‖L - D_τ(poffdiag(Σ) + pdiag(L))‖_F`.
pub fn soft_impute_fixed_point_residual(sigma: &SymMatrix, l: &SymMatrix, tau: f64) -> Result<f64> {
    let mapped = soft_threshold_sym(&sigma.with_diagonal_of(l), tau)?;
    Ok((l - &mapped).frobenius_norm())
}

/// Principal axis factoring: the engine with the rank-`r` projection.
pub fn principal_axis(
    sigma: &SymMatrix,
    r: usize,
    d0: &SymMatrix,
    stop: StopRule,
) -> Result<AlternatingOutput> {
    alternating_solve(sigma, ProxSpec::RankR { r }, d0, stop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroPcaOutput {
    pub l: SymMatrix,
    pub g: SymMatrix,
    /// Objective is `½‖poffdiag(G⁽⁰⁾ - L⁽ᵏ⁾)‖_F²`.
    pub trace: SolverTrace,
}

/// HeteroPCA: `T_max` rounds of `L⁽ᵏ⁾ = best_rank_r(G⁽ᵏ⁻¹⁾)`,
/// `G⁽ᵏ⁾ = poffdiag(G⁽ᵏ⁻¹⁾) + pdiag(L⁽ᵏ⁾)`. `g0` defaults to `poffdiag(Σ)`.
pub fn heteropca(
    sigma: &SymMatrix,
    r: usize,
    t_max: usize,
    g0: Option<&SymMatrix>,
) -> Result<HeteroPcaOutput> {
    heteropca_with(sigma, r, t_max, g0, |_, _, _| {})
}

/// [`heteropca`] with an observer called as `(k, L⁽ᵏ⁾, G⁽ᵏ⁾)`.
pub fn heteropca_with(
    sigma: &SymMatrix,
    r: usize,
    t_max: usize,
    g0: Option<&SymMatrix>,
    mut observer: impl FnMut(usize, &SymMatrix, &SymMatrix),
) -> Result<HeteroPcaOutput> {
    let p = sigma.dim();
    check_rank(r, p)?;
    let mut g = match g0 {
        Some(g0) => {
            check_same_dim(sigma, g0)?;
            g0.clone()
        }
        None => sigma.poffdiag(),
    };
    let target = g.poffdiag();
    let mut l = SymMatrix::zeros(p);
    let mut trace = SolverTrace {
        converged: true,
        ..Default::default()
    };
    for k in 1..=t_max {
        let l_next = best_rank_r(&g, r)?;
        g = g.with_diagonal_of(&l_next);
        let psi = (&target - &l_next.poffdiag()).frobenius_norm_sq();
        trace.records.push(IterRecord {
            k,
            objective: 0.5 * psi,
            fixed_point_residual: (&l_next - &l).frobenius_norm(),
            psi,
        });
        trace.iterations = k;
        l = l_next;
        observer(k, &l, &g);
    }
    trace.post_check("heteropca");
    Ok(HeteroPcaOutput { l, g, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflatedOutput {
    pub l: SymMatrix,
    pub g: SymMatrix,
    /// `r_1 < r_2 < … = r`, one entry per stage.
    pub stage_ranks: Vec<usize>,
}

/// Rank chosen for the next Deflated-HeteroPCA stage.
///
/// `sv` holds the singular values `σ_1 ≥ σ_2 ≥ …` (1-based in the rule,
/// 0-based here); `σ_{p+1}` is taken as 0. Returns the largest
/// `r' ∈ (r_prev, r]` with `σ_{r_prev+1}/σ_{r'} ≤ 4` and
/// `(σ_{r'} - σ_{r'+1})/σ_{r'} ≥ 1/r`, or `r` when no such `r'` exists.
pub fn deflation_rank(sv: &[f64], r_prev: usize, r: usize) -> usize {
    let s = |i: usize| -> f64 { sv.get(i - 1).copied().unwrap_or(0.0) };
    let head = s(r_prev + 1);
    ((r_prev + 1)..=r)
        .filter(|&rp| {
            let cur = s(rp);
            cur > 0.0 && head / cur <= 4.0 && (cur - s(rp + 1)) / cur >= 1.0 / r as f64
        })
        .max()
        .unwrap_or(r)
}

/// Deflated-HeteroPCA: HeteroPCA stages of increasing rank, each warm
/// started from the previous stage's `G`.
pub fn deflated_heteropca(sigma: &SymMatrix, r: usize, t_max_per_stage: usize) -> Result<DeflatedOutput> {
    let p = sigma.dim();
    check_rank(r, p)?;
    let mut g = sigma.poffdiag();
    let mut l = SymMatrix::zeros(p);
    let mut r_prev = 0;
    let mut stage_ranks = Vec::new();
    while r_prev < r {
        let mut sv: Vec<f64> = eig_sym(&g)?.values.iter().map(|v| v.abs()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let r_k = deflation_rank(&sv, r_prev, r);
        let out = heteropca(sigma, r_k, t_max_per_stage, Some(&g))?;
        l = out.l;
        g = out.g;
        stage_ranks.push(r_k);
        r_prev = r_k;
    }
    Ok(DeflatedOutput { l, g, stage_ranks })
}

/// HeteroPCA with a PSD constraint: `T_max` engine iterations with the
/// rank-`r` PSD projection, from `D⁽⁰⁾ = pdiag(Σ)`.
pub fn heteropca_psd(sigma: &SymMatrix, r: usize, t_max: usize) -> Result<(Decomposition, SolverTrace)> {
    check_rank(r, sigma.dim())?;
    let out = run_alternating(
        sigma,
        ProxSpec::RankRPsd { r },
        &sigma.pdiag(),
        None,
        t_max,
        |_, _, _| {},
    )?;
    Ok((
        Decomposition {
            l: out.l,
            d: out.d,
            control: Control::Rank(r),
            method: Method::HpcaPlus,
        },
        out.trace,
    ))
}

/// Best rank-`r` approximation of `poffdiag(Σ)`.
pub fn diag_deleted_pca(sigma: &SymMatrix, r: usize) -> Result<SymMatrix> {
    best_rank_r(&sigma.poffdiag(), r)
}

/// Leading `r` eigenvectors of `Σ`.
pub fn pca_baseline(sigma: &SymMatrix, r: usize) -> Result<OrthonormalBasis> {
    check_rank(r, sigma.dim())?;
    eig_sym(sigma)?.vectors.leading(r)
}

/// `τ‖L‖_* + ½‖Σ - (L + D)‖_F²`.
pub fn objective_f(sigma: &SymMatrix, l: &SymMatrix, d: &SymMatrix, tau: f64) -> Result<f64> {
    check_same_dim(sigma, l)?;
    check_same_dim(sigma, d)?;
    let penalty = if tau == 0.0 { 0.0 } else { tau * l.nuclear_norm()? };
    let resid = &(sigma - l) - d;
    Ok(penalty + 0.5 * resid.frobenius_norm_sq())
}

/// Number of eigenvalues with `|λ| > RANK_REL_CUTOFF · max|λ|`.
pub fn numerical_rank(m: &SymMatrix) -> Result<usize> {
    let vals = eig_sym(m)?.values;
    let top = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if top == 0.0 {
        return Ok(0);
    }
    Ok(vals.iter().filter(|v| v.abs() > RANK_REL_CUTOFF * top).count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedSubspace {
    pub basis: OrthonormalBasis,
    pub numerical_rank: usize,
    /// `r` exceeded the numerical rank, so some columns span the null space.
    pub padded: bool,
}

/// Eigenvectors of `L` for its `r` eigenvalues of largest magnitude.
///
/// For PSD `L` this is the usual leading eigenspace; magnitude ordering also
/// picks the range of the indefinite rank-`r` outputs of HeteroPCA and DD.
pub fn extract_subspace(l: &SymMatrix, r: usize) -> Result<ExtractedSubspace> {
    check_rank(r, l.dim())?;
    let e = eig_sym(l)?;
    let top = e.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let numerical_rank = if top == 0.0 {
        0
    } else {
        e.values.iter().filter(|v| v.abs() > RANK_REL_CUTOFF * top).count()
    };
    let mut idx = top_by_magnitude(&e.values, r);
    idx.sort_unstable();
    Ok(ExtractedSubspace {
        basis: e.vectors.select(&idx)?,
        numerical_rank,
        padded: r > numerical_rank,
    })
}

/// One method run on one covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub method: Method,
    pub control: Control,
    pub l: SymMatrix,
    pub d: SymMatrix,
    pub trace: Option<SolverTrace>,
}

impl Fit {
    pub fn converged(&self) -> bool {
        self.trace.as_ref().is_none_or(|t| t.converged)
    }

    /// Estimated `r`-dimensional subspace.
    pub fn subspace(&self, r: usize) -> Result<ExtractedSubspace> {
        extract_subspace(&self.l, r)
    }
}

/// Runs `method` with its control parameter. Rank methods use
/// [`DEFAULT_T_MAX`] iterations; `D` is `pdiag(Σ - L)` for every method.
pub fn fit(method: Method, sigma: &SymMatrix, control: Control, stop: StopRule) -> Result<Fit> {
    let (l, trace) = match (method, control) {
        (Method::Rmtfa, Control::Tau(tau)) => {
            let (dec, trace) = rmtfa(sigma, tau, stop)?;
            (dec.l, Some(trace))
        }
        (Method::Si, Control::Tau(tau)) => {
            let out = soft_impute_diag(sigma, tau, stop)?;
            (out.l, Some(out.trace))
        }
        (Method::Svd, Control::Rank(r)) => (best_rank_r(sigma, r)?, None),
        (Method::Dd, Control::Rank(r)) => (diag_deleted_pca(sigma, r)?, None),
        (Method::Hpca, Control::Rank(r)) => {
            let out = heteropca(sigma, r, DEFAULT_T_MAX, None)?;
            (out.l, Some(out.trace))
        }
        (Method::Dhpca, Control::Rank(r)) => (deflated_heteropca(sigma, r, DEFAULT_T_MAX)?.l, None),
        (Method::HpcaPlus, Control::Rank(r)) => {
            let (dec, trace) = heteropca_psd(sigma, r, DEFAULT_T_MAX)?;
            (dec.l, Some(trace))
        }
        (m, c) => {
            return Err(invalid(format!(
                "method {m} needs {}, got {c:?}",
                if m.uses_tau() { "a threshold tau" } else { "a rank r" }
            )))
        }
    };
    let d = (sigma - &l).pdiag();
    Ok(Fit {
        method,
        control,
        l,
        d,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(p: usize, k: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
        let prod = &b * b.transpose();
        SymMatrix::from_lower_fn(p, |i, j| prod[(i, j)]).unwrap()
    }

    fn random_sym(p: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SymMatrix::from_lower_fn(p, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn lambda1_offdiag(sigma: &SymMatrix) -> f64 {
        eig_sym(&sigma.poffdiag()).unwrap().values[0]
    }

    #[test]
    fn stop_rule_validation() {
        assert!(StopRule::new(0.0, 10).is_err());
        assert!(StopRule::new(1e-8, 0).is_err());
        assert_eq!(StopRule::default(), StopRule::new(1e-10, 1000).unwrap());
    }

    #[test]
    fn diagonal_input_gives_zero_l_in_one_iteration() {
        let sigma = SymMatrix::from_diagonal(&[2.0, 1.0, 3.0]).unwrap();
        for prox in [
            ProxSpec::PsdSoft { tau: 0.5 },
            ProxSpec::SymSoft { tau: 0.5 },
            ProxSpec::RankR { r: 1 },
            ProxSpec::RankRPsd { r: 2 },
        ] {
            let out = alternating_solve(&sigma, prox, &sigma.pdiag(), StopRule::default()).unwrap();
            assert!(out.l.is_zero());
            assert_eq!(out.d, sigma);
            assert_eq!(out.trace.iterations, 1);
            assert!(out.trace.converged);
        }
    }

    #[test]
    fn non_diagonal_start_rejected() {
        let sigma = random_psd(4, 2, 1);
        assert!(alternating_solve(&sigma, ProxSpec::PsdSoft { tau: 0.1 }, &sigma, StopRule::default()).is_err());
        assert!(rmtfa(&sigma, 0.0, StopRule::default()).is_err());
        assert!(rmtfa(&sigma, -1.0, StopRule::default()).is_err());
    }

    #[test]
    fn zero_input_returns_immediately() {
        let z = SymMatrix::zeros(4);
        let (dec, trace) = rmtfa(&z, 0.5, StopRule::default()).unwrap();
        assert!(dec.l.is_zero() && dec.d.is_zero());
        assert_eq!(trace.iterations, 0);
        for m in Method::ALL {
            let c = if m.uses_tau() { Control::Tau(0.5) } else { Control::Rank(2) };
            let f = fit(m, &z, c, StopRule::default()).unwrap();
            assert!(f.l.is_zero() && f.d.is_zero(), "{m}");
        }
    }

    #[test]
    fn threshold_above_offdiag_spectrum_gives_zero() {
        let sigma = random_psd(8, 3, 4);
        let tau = lambda1_offdiag(&sigma) * (1.0 + 1e-12);
        let (dec, _) = rmtfa(&sigma, tau, StopRule::default()).unwrap();
        assert!(dec.l.is_zero());
        assert_eq!(dec.d, sigma.pdiag());
    }

    #[test]
    fn two_by_two_boundary() {
        let sigma = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (dec, _) = rmtfa(&sigma, 1.0, StopRule::default()).unwrap();
        assert!(dec.l.is_zero());
        assert_eq!(dec.d, SymMatrix::from_diagonal(&[2.0, 2.0]).unwrap());
    }

    #[test]
    fn rmtfa_descends_and_converges_on_random_psd() {
        let sigma = random_psd(10, 10, 5);
        let (dec, trace) = rmtfa(&sigma, 0.3, StopRule::default()).unwrap();
        assert!(trace.converged, "iterations {}", trace.iterations);
        assert!(trace.is_monotone());
        let e = eig_sym(&dec.l).unwrap();
        assert!(*e.values.last().unwrap() >= -1e-8 * e.values[0].max(1.0));
        assert!(dec.d.is_diagonal());
    }

    #[test]
    fn rmtfa_fixed_point_on_20x20() {
        let sigma = random_psd(20, 6, 6);
        let (dec, _) = rmtfa(&sigma, 0.5, StopRule::default()).unwrap();
        assert!(rmtfa_fixed_point_residual(&sigma, &dec.l, 0.5).unwrap() < 1e-8);
    }

    #[test]
    fn rmtfa_approaches_exact_recovery_for_balanced_rank_one() {
        let beta = [1.0, 0.8, -0.6, 0.9, 0.7, -0.5];
        let dstar = [0.5, 1.0, 0.3, 0.8, 1.2, 0.4];
        let p = beta.len();
        let sigma =
            SymMatrix::from_lower_fn(p, |i, j| beta[i] * beta[j] + if i == j { dstar[i] } else { 0.0 }).unwrap();
        let (dec, _) = rmtfa(&sigma, 1e-6, StopRule::new(1e-13, 200_000).unwrap()).unwrap();
        let lstar = SymMatrix::from_lower_fn(p, |i, j| beta[i] * beta[j]).unwrap();
        let err = (&dec.l.poffdiag() - &lstar.poffdiag()).frobenius_norm();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn initialization_independence() {
        let sigma = random_psd(8, 3, 9);
        let stop = StopRule::new(1e-13, 20_000).unwrap();
        let (a, _) = rmtfa(&sigma, 0.2, stop).unwrap();
        let (b, _) = rmtfa_warm(&sigma, 0.2, &SymMatrix::zeros(8), stop).unwrap();
        assert!((&a.l - &b.l).frobenius_norm() < 1e-6);
    }

    #[test]
    fn soft_impute_cases() {
        let diag = SymMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        assert!(soft_impute_diag(&diag, 0.3, StopRule::default()).unwrap().l.is_zero());

        let sigma = random_sym(6, 12);
        let top = eig_sym(&sigma.poffdiag()).unwrap().values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(soft_impute_diag(&sigma, top * (1.0 + 1e-12), StopRule::default()).unwrap().l.is_zero());

        let out = soft_impute_diag(&sigma, 0.2, StopRule::default()).unwrap();
        assert!(out.trace.converged);
        assert!(out.trace.is_monotone());
        assert!(soft_impute_fixed_point_residual(&sigma, &out.l, 0.2).unwrap() < 1e-8);
    }

    #[test]
    fn heteropca_diagonal_input() {
        let sigma = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]).unwrap();
        let mut all_zero = true;
        heteropca_with(&sigma, 1, 5, None, |_, l, _| all_zero &= l.is_zero()).unwrap();
        assert!(all_zero);
    }

    #[test]
    fn heteropca_stationary_at_consistent_low_rank() {
        let lstar = random_psd(6, 2, 13);
        let mut gs = Vec::new();
        heteropca_with(&lstar, 2, 5, Some(&lstar), |_, _, g| gs.push(g.clone())).unwrap();
        for g in &gs {
            assert!((g - &lstar).frobenius_norm() < 1e-10);
        }
    }

    #[test]
    fn heteropca_matches_principal_axis() {
        let sigma = random_psd(8, 8, 14);
        for r in [1, 3] {
            let mut hp = Vec::new();
            heteropca_with(&sigma, r, 30, None, |_, l, _| hp.push(l.clone())).unwrap();
            let mut pa = Vec::new();
            alternating_solve_with(
                &sigma,
                ProxSpec::RankR { r },
                &sigma.pdiag(),
                StopRule::new(f64::MIN_POSITIVE, 30).unwrap(),
                |_, l, _| pa.push(l.clone()),
            )
            .unwrap();
            for (a, b) in hp.iter().zip(&pa) {
                assert!((a - b).frobenius_norm() < 1e-10);
            }
        }
    }

    #[test]
    fn deflation_rule() {
        // two tiers
        let sv = [100.0, 100.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(deflation_rank(&sv, 0, 5), 2);
        assert_eq!(deflation_rank(&sv, 2, 5), 5);
        // single tier, kappa <= 4 and a clear gap at r
        let sv = [4.0, 3.0, 2.0, 1.5, 0.1];
        assert_eq!(deflation_rank(&sv, 0, 4), 4);
        // r = 1: candidate set is {1} or empty
        assert_eq!(deflation_rank(&[1.0, 1.0], 0, 1), 1);
        assert_eq!(deflation_rank(&[2.0, 1.0], 0, 1), 1);
    }

    #[test]
    fn deflated_rank_one_is_heteropca() {
        let sigma = random_psd(7, 3, 15);
        let dh = deflated_heteropca(&sigma, 1, 30).unwrap();
        assert_eq!(dh.stage_ranks, vec![1]);
        assert_eq!(dh.l, heteropca(&sigma, 1, 30, None).unwrap().l);
    }

    #[test]
    fn heteropca_psd_behaviour() {
        let diag = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]).unwrap();
        assert!(heteropca_psd(&diag, 2, 30).unwrap().0.l.is_zero());

        let sigma = random_sym(7, 16);
        let (dec, trace) = heteropca_psd(&sigma, 3, 30).unwrap();
        assert!(trace.is_monotone());
        let e = eig_sym(&dec.l).unwrap();
        assert!(*e.values.last().unwrap() >= -1e-12 * e.values[0].abs().max(1.0));
    }

    #[test]
    fn heteropca_psd_fixed_point_on_low_rank() {
        let lstar = random_psd(8, 2, 17);
        let (dec, _) = heteropca_psd(&lstar, 2, 3000).unwrap();
        let again = crate::shrinkage::best_rank_r_psd(&(&lstar - &dec.d), 2).unwrap();
        assert!((&again - &dec.l).frobenius_norm() < 1e-8);
    }

    #[test]
    fn diag_deleted_cases() {
        let hollow = random_sym(5, 18).poffdiag();
        assert_eq!(diag_deleted_pca(&hollow, 2).unwrap(), best_rank_r(&hollow, 2).unwrap());
        let diag = SymMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        assert!(diag_deleted_pca(&diag, 1).unwrap().is_zero());
        let sigma = random_psd(6, 6, 19);
        let one_step = heteropca(&sigma, 2, 1, None).unwrap().l;
        assert_eq!(diag_deleted_pca(&sigma, 2).unwrap(), one_step);
    }

    #[test]
    fn pca_baseline_cases() {
        let d = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]).unwrap();
        let u = pca_baseline(&d, 2).unwrap();
        assert_eq!(u.columns().column(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(u.columns().column(1).as_slice(), &[0.0, 1.0, 0.0]);
        let beta = [0.6, -0.8, 0.0];
        let rank1 = SymMatrix::from_lower_fn(3, |i, j| beta[i] * beta[j]).unwrap();
        let v = pca_baseline(&rank1, 1).unwrap();
        let dot: f64 = (0..3).map(|i| v.columns()[(i, 0)] * beta[i]).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        assert!(pca_baseline(&d, 4).is_err());
    }

    #[test]
    fn objective_cases() {
        let sigma = random_psd(5, 5, 20);
        let f = objective_f(&sigma, &SymMatrix::zeros(5), &sigma.pdiag(), 0.7).unwrap();
        assert!((f - 0.5 * sigma.poffdiag().frobenius_norm_sq()).abs() < 1e-12);
        assert_eq!(objective_f(&sigma, &sigma, &SymMatrix::zeros(5), 0.0).unwrap(), 0.0);

        // independent scalar re-evaluation
        let l = random_psd(5, 2, 21);
        let d = SymMatrix::from_diagonal(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let tau = 0.37;
        let nuc: f64 = nalgebra::SymmetricEigen::new(l.as_matrix().clone())
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .sum();
        let mut sq = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let r = sigma.get(i, j) - l.get(i, j) - d.get(i, j);
                sq += r * r;
            }
        }
        let want = tau * nuc + 0.5 * sq;
        assert!((objective_f(&sigma, &l, &d, tau).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn subspace_extraction() {
        let l = SymMatrix::from_diagonal(&[0.0, 5.0, 2.0, 0.0]).unwrap();
        let s = extract_subspace(&l, 2).unwrap();
        assert_eq!(s.numerical_rank, 2);
        assert!(!s.padded);
        assert_eq!(s.basis.columns().column(0).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.basis.columns().column(1).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let s = extract_subspace(&l, 3).unwrap();
        assert!(s.padded);
        assert!(extract_subspace(&l, 0).is_err());
    }

    #[test]
    fn fit_rejects_mismatched_control() {
        let sigma = random_psd(4, 4, 22);
        assert!(fit(Method::Rmtfa, &sigma, Control::Rank(2), StopRule::default()).is_err());
        assert!(fit(Method::Hpca, &sigma, Control::Tau(0.1), StopRule::default()).is_err());
        assert_eq!("hpca_plus".parse::<Method>().unwrap(), Method::HpcaPlus);
        assert!("pca".parse::<Method>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_engine_solver_descends(seed in any::<u64>(), which in 0usize..4) {
            let sigma = random_psd(7, 7, seed);
            let trace = match which {
                0 => rmtfa(&sigma, 0.2, StopRule::default()).unwrap().1,
                1 => soft_impute_diag(&sigma, 0.2, StopRule::default()).unwrap().trace,
                2 => heteropca_psd(&sigma, 2, 30).unwrap().1,
                _ => principal_axis(&sigma, 2, &sigma.pdiag(), StopRule::default()).unwrap().trace,
            };
            prop_assert!(trace.is_monotone(), "{:?}", trace.descent_violations());
        }

        #[test]
        fn subspace_columns_orthonormal(seed in any::<u64>(), r in 1usize..6) {
            let l = random_sym(6, seed);
            let s = extract_subspace(&l, r).unwrap();
            let gram = s.basis.columns().transpose() * s.basis.columns();
            prop_assert!((gram - DMatrix::<f64>::identity(r, r)).norm() < 1e-10);
        }
    }
}
