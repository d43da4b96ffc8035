//! Weighted-data EM for mixtures of bivariate Gaussians.
//!
//! Every observation's log-likelihood contribution is scaled by its weight:
//!
//! ```text
//! L(Θ) = Σ_ℓ w_ℓ log Σ_k π_k N(x_ℓ; μ_k, Σ_k)
//! ```
//!
//! With `w_ℓ = 1/L` the updates reduce to the textbook EM iteration.

use rand::seq::index::sample_weighted;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::grid_centers;
use crate::error::{Error, Result};
use crate::gauss2d::{log_pdf, Gaussian2, Spd2, Sym2, Vec2};

/// Smallest covariance eigenvalue allowed after an M step.
pub const COV_FLOOR: f64 = 1e-6;

/// Mixing weight below which a component counts as collapsed.
pub const COLLAPSE_PI: f64 = 1e-12;

/// Default absolute log-likelihood improvement used as the stopping rule.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Tolerance on `Σ π_k = 1` accepted when building a mixture.
pub const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridObservation {
    pub location: Vec2,
    pub weight: f64,
}

/// Observations whose weights have been normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    observations: Vec<GridObservation>,
}

impl WeightedDataset {
    /// Validates and normalizes the raw weights.
    pub fn new(mut observations: Vec<GridObservation>) -> Result<Self> {
        for obs in &observations {
            let x = obs.location;
            if !(x.is_finite() && (0.0..=1.0).contains(&x.u) && (0.0..=1.0).contains(&x.v)) {
                return Err(Error::InvalidArgument(format!(
                    "observation location ({}, {}) lies outside the unit square",
                    x.u, x.v
                )));
            }
            if !(obs.weight >= 0.0) || !obs.weight.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "observation weight must be finite and nonnegative, got {}",
                    obs.weight
                )));
            }
        }
        let total: f64 = observations.iter().map(|o| o.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(
                "at least one observation weight must be strictly positive".into(),
            ));
        }
        for obs in &mut observations {
            obs.weight /= total;
        }
        Ok(WeightedDataset { observations })
    }

    /// Weights of an `height × width` grid in row-major order, placed at cell centers.
    pub fn from_grid(height: usize, width: usize, weights: &[f64]) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        if height.checked_mul(width) != Some(weights.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} grid does not match {} weights",
                weights.len()
            )));
        }
        let observations = grid_centers(height, width)
            .into_iter()
            .zip(weights)
            .map(|(location, &weight)| GridObservation { location, weight })
            .collect();
        WeightedDataset::new(observations)
    }

    pub fn observations(&self) -> &[GridObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.observations.iter().filter(|o| o.weight > 0.0).count()
    }

    /// Weighted mean and (unfloored) weighted covariance of the locations.
    pub fn weighted_moments(&self) -> (Vec2, Sym2) {
        let mut mean = Vec2::ZERO;
        for o in &self.observations {
            mean = mean + o.location * o.weight;
        }
        let mut cov = Sym2::ZERO;
        for o in &self.observations {
            cov = cov + Sym2::outer(o.location - mean).scale(o.weight);
        }
        (mean, cov)
    }
}

/// Raises every eigenvalue below `COV_FLOOR` to `COV_FLOOR`, keeping the
/// eigenvectors. This is the maximizer of the M-step objective over
/// covariances with `Σ ⪰ COV_FLOOR · I`, so EM stays monotone.
pub fn floor_covariance(cov: Sym2) -> Result<Spd2> {
    let mid = 0.5 * (cov.xx + cov.yy);
    let radius = (0.5 * (cov.xx - cov.yy)).hypot(cov.xy);
    let (hi, lo) = (mid + radius, mid - radius);
    let cov = if hi < COV_FLOOR {
        Sym2::new(COV_FLOOR, 0.0, COV_FLOOR)
    } else if lo < COV_FLOOR {
        // Σ + (ε − λ_lo) P_lo with P_lo = (λ_hi I − Σ) / (λ_hi − λ_lo).
        let s = (COV_FLOOR - lo) / (hi - lo);
        Sym2::new(
            cov.xx + s * (hi - cov.xx),
            cov.xy - s * cov.xy,
            cov.yy + s * (hi - cov.yy),
        )
    } else {
        cov
    };
    Spd2::from_sym(cov)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub pi: f64,
    pub gaussian: Gaussian2,
}

/// Mixture parameters `Θ = {(π_k, μ_k, Σ_k)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct MixtureParams {
    components: Vec<Component>,
}

impl MixtureParams {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("a mixture needs at least one component".into()));
        }
        for c in &components {
            if !(0.0..=1.0).contains(&c.pi) {
                return Err(Error::InvalidArgument(format!(
                    "mixing weight {} is outside [0, 1]",
                    c.pi
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.pi).sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        Ok(MixtureParams { components })
    }

    /// A single Gaussian as a one-component mixture.
    pub fn single(g: Gaussian2) -> Self {
        MixtureParams {
            components: vec![Component { pi: 1.0, gaussian: g }],
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `log p(x)` via log-sum-exp over components.
    pub fn log_pdf(&self, x: Vec2) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.pi.ln() + log_pdf(&c.gaussian, x)))
    }

    pub fn pdf(&self, x: Vec2) -> f64 {
        self.log_pdf(x).exp()
    }
}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    pi: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    components: Vec<RawComponent>,
}

impl TryFrom<RawMixture> for MixtureParams {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        let mut components = Vec::with_capacity(raw.components.len());
        for c in raw.components {
            let [[a, b1], [b2, cc]] = c.cov;
            let scale = a.abs().max(cc.abs()).max(f64::MIN_POSITIVE);
            if !((b1 - b2).abs() <= 1e-12 * scale) {
                return Err(Error::InvalidArgument(format!(
                    "covariance off-diagonals differ: {b1} vs {b2}"
                )));
            }
            let cov = Spd2::new(a, 0.5 * (b1 + b2), cc)?;
            let gaussian = Gaussian2::new(Vec2::new(c.mean[0], c.mean[1]), cov)?;
            components.push(Component { pi: c.pi, gaussian });
        }
        MixtureParams::new(components)
    }
}

impl From<MixtureParams> for RawMixture {
    fn from(m: MixtureParams) -> Self {
        RawMixture {
            components: m
                .components
                .into_iter()
                .map(|c| RawComponent {
                    pi: c.pi,
                    mean: c.gaussian.mean.to_array(),
                    cov: c.gaussian.cov.to_array(),
                })
                .collect(),
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `Σ_ℓ w_ℓ log Σ_k π_k N(x_ℓ; μ_k, Σ_k)`.
pub fn weighted_loglik(data: &WeightedDataset, params: &MixtureParams) -> f64 {
    data.observations
        .iter()
        .filter(|o| o.weight > 0.0)
        .map(|o| o.weight * params.log_pdf(o.location))
        .sum()
}

/// Posterior responsibilities `γ` stored row-major, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    /// Builds a responsibility matrix from rows of length `k`.
    pub fn from_rows(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of length {k}",
                values.len()
            )));
        }
        Ok(Responsibilities { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_obs(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.k..(l + 1) * self.k]
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.values[l * self.k + k]
    }
}

/// E step: `γ_ℓk ∝ π_k N(x_ℓ; μ_k, Σ_k)`, normalized per row in the log domain.
pub fn e_step(data: &WeightedDataset, params: &MixtureParams) -> Responsibilities {
    let k = params.k();
    let mut values = Vec::with_capacity(data.len() * k);
    let mut logs = vec![0.0; k];
    for obs in &data.observations {
        for (slot, c) in logs.iter_mut().zip(&params.components) {
            *slot = c.pi.ln() + log_pdf(&c.gaussian, obs.location);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        let mut total = 0.0;
        for &lg in &logs {
            let e = (lg - max).exp();
            total += e;
            values.push(e);
        }
        for v in &mut values[start..] {
            *v /= total;
        }
    }
    Responsibilities { k, values }
}

/// A component whose M-step mixing weight fell below [`COLLAPSE_PI`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapsedComponent {
    pub component: usize,
    pub pi: f64,
}

/// M step: re-estimate `(π_k, μ_k, Σ_k)` from the responsibilities, applying
/// the covariance floor.
pub fn m_step(
    data: &WeightedDataset,
    gamma: &Responsibilities,
) -> std::result::Result<MixtureParams, CollapsedComponent> {
    assert_eq!(gamma.n_obs(), data.len(), "responsibility rows must match observations");
    let k = gamma.k();
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let mut pi = 0.0;
        let mut sum = Vec2::ZERO;
        for (l, obs) in data.observations.iter().enumerate() {
            let r = obs.weight * gamma.get(l, j);
            pi += r;
            sum = sum + obs.location * r;
        }
        if !(pi >= COLLAPSE_PI) {
            return Err(CollapsedComponent { component: j, pi });
        }
        let mean = sum * (1.0 / pi);
        let mut scatter = Sym2::ZERO;
        for (l, obs) in data.observations.iter().enumerate() {
            let r = obs.weight * gamma.get(l, j);
            scatter = scatter + Sym2::outer(obs.location - mean).scale(r);
        }
        let cov = floor_covariance(scatter.scale(1.0 / pi)).map_err(|_| CollapsedComponent { component: j, pi })?;
        components.push(Component {
            pi,
            gaussian: Gaussian2 { mean, cov },
        });
    }
    Ok(MixtureParams { components })
}

/// One full EM iteration (E step followed by M step).
pub fn em_iterate(
    data: &WeightedDataset,
    params: &MixtureParams,
) -> std::result::Result<MixtureParams, CollapsedComponent> {
    m_step(data, &e_step(data, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    pub params: MixtureParams,
    /// Log-likelihood of the initial parameters followed by one entry per iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl EmReport {
    pub fn final_loglik(&self) -> f64 {
        *self
            .loglik_trace
            .last()
            .expect("trace holds at least the initial value")
    }
}

/// Runs EM from `init` for at most `max_iters` iterations, stopping early once
/// the log-likelihood improves by less than `tol`. Pass `f64::NEG_INFINITY` as
/// `tol` for a fixed iteration budget.
pub fn run_em(data: &WeightedDataset, init: &MixtureParams, max_iters: usize, tol: f64) -> Result<EmReport> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let mut params = init.clone();
    let mut trace = vec![weighted_loglik(data, &params)];
    let mut converged = false;
    let mut iterations_run = 0;
    for iteration in 1..=max_iters {
        let next = em_iterate(data, &params).map_err(|c| Error::Collapsed {
            component: c.component,
            iteration,
            last_valid: Box::new(params.clone()),
            loglik_trace: trace.clone(),
        })?;
        let ll = weighted_loglik(data, &next);
        let improvement = ll - trace[trace.len() - 1];
        params = next;
        trace.push(ll);
        iterations_run = iteration;
        if improvement < tol {
            converged = true;
            break;
        }
    }
    Ok(EmReport {
        params,
        loglik_trace: trace,
        iterations_run,
        converged,
    })
}

/// Random initialization: uniform mixing weights, means drawn without
/// replacement with probability proportional to the observation weights, and
/// every covariance set to the floored global weighted covariance divided by `k`.
pub fn init_params(data: &WeightedDataset, k: usize, seed: u64) -> Result<MixtureParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of components must be at least 1".into()));
    }
    let positive = data.positive_count();
    if k > positive {
        return Err(Error::InvalidArgument(format!(
            "cannot place {k} components on {positive} positive-weight observations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = &data.observations;
    let picks = sample_weighted(&mut rng, obs.len(), |i| obs[i].weight, k)
        .map_err(|e| Error::InvalidArgument(format!("weighted sampling failed: {e}")))?;
    let (_, global) = data.weighted_moments();
    let cov = floor_covariance(global.scale(1.0 / k as f64))?;
    let pi = 1.0 / k as f64;
    let components = picks
        .iter()
        .map(|i| Component {
            pi,
            gaussian: Gaussian2 {
                mean: obs[i].location,
                cov,
            },
        })
        .collect();
    MixtureParams::new(components)
}

/// Runs EM from `restarts` random initializations (seeds `seed`, `seed + 1`, …)
/// and keeps the run with the highest final weighted log-likelihood, breaking
/// ties by the lowest restart index. Restarts run concurrently.
pub fn run_em_restarts(
    data: &WeightedDataset,
    k: usize,
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<EmReport> {
    run_em_restarts_with_tol(data, k, restarts, max_iters, seed, DEFAULT_TOL)
}

pub fn run_em_restarts_with_tol(
    data: &WeightedDataset,
    k: usize,
    restarts: usize,
    max_iters: usize,
    seed: u64,
    tol: f64,
) -> Result<EmReport> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let inits = (0..restarts as u64)
        .map(|r| init_params(data, k, seed.wrapping_add(r)))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Result<EmReport>> = inits
        .par_iter()
        .map(|init| run_em(data, init, max_iters, tol))
        .collect();

    let mut best: Option<EmReport> = None;
    for run in runs {
        match run {
            Ok(report) => {
                let better = best.as_ref().is_none_or(|b| report.final_loglik() > b.final_loglik());
                if better {
                    best = Some(report);
                }
            }
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::AllRestartsFailed { k, restarts })
}
