//! Synthetic heteroskedastic factor models and the Monte-Carlo runner.
//!
//! All randomness comes from `ChaCha8Rng` seeded with a `u64`. Replicate `i`
//! of an experiment uses seed `base + i`, so every varied value sees the same
//! underlying draws and every method within a replicate sees the same `Σ`.

use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matcore::{eig_sym, OrthonormalBasis, SymMatrix};
use crate::metrics::{ledermann_bound, sin_theta};
use crate::solvers::{fit, Control, Method, StopRule};

/// Parameters of the signal-plus-noise model `Y = M + Z ∈ R^{p×n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub kappa: f64,
    pub omega: f64,
    pub seed: u64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(invalid("n and p must be positive"));
        }
        if self.r == 0 || self.r > self.n.min(self.p) {
            return Err(invalid(format!(
                "rank must satisfy 1 <= r <= min(n, p) = {}, got {}",
                self.n.min(self.p),
                self.r
            )));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(invalid(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(invalid(format!("omega must be > 0, got {}", self.omega)));
        }
        if self.r == 1 && self.kappa > 1.0 {
            return Err(invalid("kappa > 1 needs r >= 2 (the spectrum interpolates between σ_1 and σ_r)"));
        }
        Ok(())
    }

    /// True when `r` exceeds the Ledermann bound of `p`.
    pub fn exceeds_ledermann(&self) -> bool {
        self.r as f64 > ledermann_bound(self.p)
    }

    /// Smallest signal singular value, `(np)^{1/4} + p^{1/2}`.
    pub fn sigma_r(&self) -> f64 {
        ((self.n * self.p) as f64).powf(0.25) + (self.p as f64).sqrt()
    }

    /// `σ_1 ≥ … ≥ σ_r` with `σ_{r-i} = κ^{i/(r-1)} σ_r`.
    pub fn singular_values(&self) -> Vec<f64> {
        let base = self.sigma_r();
        let r = self.r;
        if r == 1 {
            return vec![base];
        }
        (0..r)
            .map(|c| {
                let i = r - 1 - c;
                self.kappa.powf(i as f64 / (r - 1) as f64) * base
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Signal {
    pub m: DMatrix<f64>,
    pub u: OrthonormalBasis,
    pub singular_values: Vec<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // column-major fill order is part of the reproducibility contract
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gram(y: &DMatrix<f64>) -> Result<SymMatrix> {
    let prod = y * y.transpose();
    SymMatrix::from_lower_fn(y.nrows(), |i, j| prod[(i, j)])
}

/// Low-rank signal whose singular bases are the leading singular bases of
/// an i.i.d. standard Gaussian `p × n` draw.
pub fn gen_signal(params: &ModelParams, rng: &mut ChaCha8Rng) -> Result<Signal> {
    params.validate()?;
    let (p, n, r) = (params.p, params.n, params.r);
    let g = gaussian_matrix(p, n, rng);
    let u = eig_sym(&gram(&g)?)?.vectors.leading(r)?;
    // right singular vectors span Gᵀu_i; re-orthonormalize for exactness
    let v = (g.transpose() * u.columns()).qr().q();
    let singular_values = params.singular_values();
    let mut us = u.columns().clone();
    for (c, s) in singular_values.iter().enumerate() {
        us.column_mut(c).scale_mut(*s);
    }
    let m = us * v.transpose();
    Ok(Signal {
        m,
        u,
        singular_values,
    })
}

/// Row-scaled Gaussian noise `diag(ω_1..ω_p) Z₀` with `ω_i ~ U[0, ω]`.
/// Returns the noise and the per-row levels.
pub fn gen_noise(params: &ModelParams, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(params.omega > 0.0) {
        return Err(invalid(format!("omega must be > 0, got {}", params.omega)));
    }
    let levels: Vec<f64> = (0..params.p)
        .map(|_| rng.random::<f64>() * params.omega)
        .collect();
    let mut z = gaussian_matrix(params.p, params.n, rng);
    for (i, w) in levels.iter().enumerate() {
        z.row_mut(i).scale_mut(*w);
    }
    Ok((z, levels))
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub params: ModelParams,
    pub m: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub noise_levels: Vec<f64>,
    /// `Σ = YYᵀ`
    pub sigma: SymMatrix,
    pub u_true: OrthonormalBasis,
    pub singular_values: Vec<f64>,
}

/// Draws signal then noise from one stream seeded with `params.seed`.
pub fn gen_instance(params: &ModelParams) -> Result<Instance> {
    params.validate()?;
    if params.exceeds_ledermann() {
        warn!(
            "r = {} exceeds the Ledermann bound {:.3} for p = {}",
            params.r,
            ledermann_bound(params.p),
            params.p
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let signal = gen_signal(params, &mut rng)?;
    let (z, noise_levels) = gen_noise(params, &mut rng)?;
    let y = &signal.m + &z;
    let sigma = gram(&y)?;
    Ok(Instance {
        params: *params,
        m: signal.m,
        z,
        y,
        noise_levels,
        sigma,
        u_true: signal.u,
        singular_values: signal.singular_values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Masked {
    pub y: DMatrix<f64>,
    /// `true` where the entry was removed (set to zero).
    pub missing: DMatrix<bool>,
}

/// Removes each entry independently with probability `theta` (the
/// probability of being *missing*), replacing it with zero.
pub fn gen_masked(y: &DMatrix<f64>, theta: f64, rng: &mut ChaCha8Rng) -> Result<Masked> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    let missing = DMatrix::from_fn(y.nrows(), y.ncols(), |_, _| rng.random::<f64>() < theta);
    let y = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| if missing[(i, j)] { 0.0 } else { y[(i, j)] });
    Ok(Masked { y, missing })
}

// ---------------------------------------------------------------------------
// experiments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub kappa: f64,
    pub omega: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline {
            n: 200,
            p: 50,
            r: 5,
            kappa: 3.0,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VaryParam {
    N,
    P,
    R,
    Kappa,
    Omega,
}

impl VaryParam {
    pub fn name(&self) -> &'static str {
        match self {
            VaryParam::N => "n",
            VaryParam::P => "p",
            VaryParam::R => "r",
            VaryParam::Kappa => "kappa",
            VaryParam::Omega => "omega",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vary {
    pub param: VaryParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauRule {
    /// `τ = σ_r² / 16` with the true `σ_r` of the instance.
    #[default]
    SigmaRSqOver16,
    Explicit(f64),
}

/// One-at-a-time sweep over a model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub baseline: Baseline,
    pub vary: Vary,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub tau_rule: TauRule,
    /// Fill the `wall_ms` column. Off by default so results are byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(invalid(format!("{name} must be a positive integer, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn params_for(&self, value: f64, seed: u64) -> Result<ModelParams> {
        let b = self.baseline;
        let mut params = ModelParams {
            n: b.n,
            p: b.p,
            r: b.r,
            kappa: b.kappa,
            omega: b.omega,
            seed,
        };
        match self.vary.param {
            VaryParam::N => params.n = as_count("n", value)?,
            VaryParam::P => params.p = as_count("p", value)?,
            VaryParam::R => params.r = as_count("r", value)?,
            VaryParam::Kappa => params.kappa = value,
            VaryParam::Omega => params.omega = value,
        }
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("methods must be non-empty"));
        }
        if self.vary.values.is_empty() {
            return Err(invalid("vary.values must be non-empty"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be >= 1"));
        }
        if let TauRule::Explicit(t) = self.tau_rule {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid(format!("explicit tau must be > 0, got {t}")));
            }
        }
        for &v in &self.vary.values {
            self.params_for(v, self.seed)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub param: String,
    pub value: f64,
    pub replicate: usize,
    pub sin_theta: Option<f64>,
    pub wall_ms: Option<f64>,
    pub status: String,
}

/// Runs one replicate at one parameter value: all methods on one `Σ`.
fn run_cell(config: &ExperimentConfig, value: f64, replicate: usize) -> Vec<ResultRow> {
    let row = |method: Method, sin_theta: Option<f64>, wall_ms: Option<f64>, status: String| ResultRow {
        method,
        param: config.vary.param.name().to_string(),
        value,
        replicate,
        sin_theta,
        wall_ms,
        status,
    };
    let seed = config.seed.wrapping_add(replicate as u64);
    let instance = match config.params_for(value, seed).and_then(|p| gen_instance(&p)) {
        Ok(inst) => inst,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| row(m, None, None, format!("error: {e}")))
                .collect()
        }
    };
    let r = instance.params.r;
    let tau = match config.tau_rule {
        TauRule::SigmaRSqOver16 => instance.singular_values[r - 1].powi(2) / 16.0,
        TauRule::Explicit(t) => t,
    };
    config
        .methods
        .iter()
        .map(|&method| {
            let control = if method.uses_tau() { Control::Tau(tau) } else { Control::Rank(r) };
            let start = Instant::now();
            let outcome = fit(method, &instance.sigma, control, StopRule::default()).and_then(|f| {
                let basis = f.subspace(r)?.basis;
                Ok((sin_theta(&basis, &instance.u_true)?, f.converged()))
            });
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let wall = config.record_wall_time.then_some(elapsed);
            match outcome {
                Ok((s, true)) => row(method, Some(s), wall, "ok".into()),
                Ok((s, false)) => row(method, Some(s), wall, "not_converged".into()),
                Err(e) => row(method, None, wall, format!("error: {e}")),
            }
        })
        .collect()
}

/// Runs every (value, replicate, method) cell. `jobs` caps the worker
/// threads (`None` uses the rayon default). Rows come back ordered by value,
/// then replicate, then method as listed in the config, regardless of schedule.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let cells: Vec<(f64, usize)> = config
        .vary
        .values
        .iter()
        .flat_map(|&v| (0..config.replicates).map(move |i| (v, i)))
        .collect();
    let per_cell: Vec<Vec<ResultRow>> = match jobs {
        Some(1) => cells.iter().map(|&(v, i)| run_cell(config, v, i)).collect(),
        _ => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(j) = jobs {
                builder = builder.num_threads(j);
            }
            let pool = builder
                .build()
                .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
            pool.install(|| cells.par_iter().map(|&(v, i)| run_cell(config, v, i)).collect())
        }
    };
    Ok(per_cell.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::pca_baseline;

    fn params(n: usize, p: usize, r: usize, kappa: f64, omega: f64) -> ModelParams {
        ModelParams {
            n,
            p,
            r,
            kappa,
            omega,
            seed: 7,
        }
    }

    #[test]
    fn signal_strength_formula() {
        assert_eq!(params(16, 16, 1, 1.0, 1.0).sigma_r(), 8.0);
        let sv = params(16, 16, 2, 4.0, 1.0).singular_values();
        assert_eq!(sv, vec![32.0, 8.0]);
    }

    #[test]
    fn spectrum_ratios_exact() {
        let pr = params(40, 30, 5, 3.0, 1.0);
        let sv = pr.singular_values();
        for i in 0..5 {
            assert_eq!(sv[4 - i] / sv[4], 3f64.powf(i as f64 / 4.0));
        }
    }

    #[test]
    fn rank_one_with_kappa_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_signal(&params(10, 10, 1, 2.0, 1.0), &mut rng).is_err());
        assert!(gen_signal(&params(10, 10, 1, 1.0, 1.0), &mut rng).is_ok());
        assert!(params(10, 10, 11, 1.0, 1.0).validate().is_err());
        assert!(params(10, 10, 2, 0.5, 1.0).validate().is_err());
        assert!(params(10, 10, 2, 1.0, 0.0).validate().is_err());
    }

    #[test]
    fn signal_has_requested_rank_and_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = params(30, 12, 3, 4.0, 1.0);
        let s = gen_signal(&pr, &mut rng).unwrap();
        let gram_u = s.u.columns().transpose() * s.u.columns();
        assert!((gram_u - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
        let sv = s.m.clone().svd(false, false).singular_values;
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[3] < 1e-8 * sv[2]);
        assert!((sv[0] / sv[2] - 4.0).abs() < 1e-10);
    }

    #[test]
    fn noise_scaling_and_determinism() {
        let pr = params(20, 5, 2, 1.0, 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (z, _) = gen_noise(&pr, &mut rng).unwrap();
        assert!(z.norm() < 1e-9);

        let pr = params(20, 5, 2, 1.0, 2.0);
        let a = gen_noise(&pr, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gen_noise(&pr, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_row_std_matches_level() {
        let n = 10_000;
        let pr = params(n, 6, 1, 1.0, 2.0);
        let (z, levels) = gen_noise(&pr, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (i, w) in levels.iter().enumerate() {
            let row = z.row(i);
            let var = row.iter().map(|x| x * x).sum::<f64>() / n as f64;
            // sample sd has standard error ≈ ω/√(2n)
            let se = w / (2.0 * n as f64).sqrt();
            assert!((var.sqrt() - w).abs() <= 5.0 * se + 1e-15, "row {i}");
        }
    }

    #[test]
    fn near_noiseless_instance_recovers_subspace() {
        let inst = gen_instance(&params(40, 15, 3, 2.0, 1e-12)).unwrap();
        let u = pca_baseline(&inst.sigma, 3).unwrap();
        assert!(sin_theta(&u, &inst.u_true).unwrap() < 1e-6);
    }

    #[test]
    fn instance_is_psd_and_reproducible() {
        let pr = params(30, 10, 2, 3.0, 1.0);
        let a = gen_instance(&pr).unwrap();
        let e = eig_sym(&a.sigma).unwrap();
        assert!(*e.values.last().unwrap() >= -1e-8 * e.values[0]);
        let b = gen_instance(&pr).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert!((a.singular_values[0] / a.singular_values[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn masking() {
        let y = DMatrix::from_element(100, 100, 1.0);
        assert!(gen_masked(&y, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(gen_masked(&y, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let a = gen_masked(&y, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gen_masked(&y, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let zeroed = a.missing.iter().filter(|&&m| m).count() as f64;
        let (n, th) = (1e4, 0.3);
        assert!((zeroed - n * th).abs() <= 3.0 * (n * th * (1.0 - th)).sqrt());
        assert!(a.y.iter().zip(a.missing.iter()).all(|(v, m)| (*v == 0.0) == *m));

        // tiny theta keeps essentially everything
        let c = gen_masked(&y, 1e-9, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(c.missing.iter().filter(|&&m| m).count(), 0);
    }

    fn small_config(methods: Vec<Method>, values: Vec<f64>, replicates: usize) -> ExperimentConfig {
        ExperimentConfig {
            baseline: Baseline {
                n: 40,
                p: 12,
                r: 2,
                kappa: 2.0,
                omega: 1.0,
            },
            vary: Vary {
                param: VaryParam::Kappa,
                values,
            },
            methods,
            replicates,
            seed: 11,
            tau_rule: TauRule::SigmaRSqOver16,
            record_wall_time: false,
        }
    }

    #[test]
    fn experiment_cardinality_and_determinism() {
        let cfg = small_config(vec![Method::Rmtfa], vec![2.0], 2);
        let rows = run_experiment(&cfg, Some(1)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.sin_theta.is_some_and(|s| (0.0..=1.0).contains(&s))));

        let cfg = small_config(Method::ALL.to_vec(), vec![1.5, 4.0], 3);
        let a = run_experiment(&cfg, Some(1)).unwrap();
        let b = run_experiment(&cfg, Some(2)).unwrap();
        assert_eq!(a.len(), 7 * 2 * 3);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(small_config(vec![], vec![2.0], 1).validate().is_err());
        assert!(small_config(vec![Method::Svd], vec![], 1).validate().is_err());
        assert!(small_config(vec![Method::Svd], vec![2.0], 0).validate().is_err());
        assert!(small_config(vec![Method::Svd], vec![0.5], 1).validate().is_err());
        let mut cfg = small_config(vec![Method::Svd], vec![2.5], 1);
        cfg.vary.param = VaryParam::R;
        assert!(cfg.validate().is_err());
    }
}
