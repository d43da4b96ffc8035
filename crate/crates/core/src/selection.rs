//! Choosing the number of mixture components with the penalized criterion
//! `C(Θ̂_k, k) = −2 L(Θ̂_k) + λ k`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{run_em_restarts, EmReport, MixtureParams, WeightedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub lambda: f64,
    pub restarts: usize,
    pub max_iters: usize,
    pub base_seed: u64,
}

impl Default for SelectionConfig {
    /// Test-time settings: up to four components, λ = 5, three restarts of
    /// ten EM iterations each.
    fn default() -> Self {
        SelectionConfig {
            k_min: 1,
            k_max: 4,
            lambda: 5.0,
            restarts: 3,
            max_iters: 10,
            base_seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k_min <= k_max, got k_min = {}, k_max = {}",
                self.k_min, self.k_max
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "restarts and max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Seed of the first restart for `k` components.
    pub fn seed_for(&self, k: usize) -> u64 {
        self.base_seed.wrapping_add((k as u64) << 32)
    }
}

/// Outcome of fitting one candidate `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub k: usize,
    /// Final weighted log-likelihood; `None` when every restart failed.
    pub loglik: Option<f64>,
    /// `+∞` for excluded candidates (serialized as `null`).
    #[serde(deserialize_with = "de_criterion")]
    pub criterion: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

fn de_criterion<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen_k: usize,
    pub chosen_params: MixtureParams,
    pub lambda: f64,
    pub per_k: Vec<CandidateFit>,
}

/// `−2 · loglik + λ · k`.
pub fn criterion(loglik: f64, k: usize, lambda: f64) -> f64 {
    -2.0 * loglik + lambda * k as f64
}

/// Argmin of the criterion over `(k, loglik)` pairs at penalty `lambda`;
/// ties and `None` logliks resolve as in [`select_k`].
pub fn argmin_k(candidates: &[(usize, Option<f64>)], lambda: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, loglik) in candidates {
        let Some(ll) = loglik else { continue };
        let c = criterion(ll, k, lambda);
        let better = match best {
            None => true,
            Some((bk, bc)) => c < bc || (c == bc && k < bk),
        };
        if better {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

impl SelectionReport {
    /// Re-runs the argmin on the stored log-likelihoods with a different penalty.
    pub fn rechoose(&self, lambda: f64) -> Option<usize> {
        let pairs: Vec<(usize, Option<f64>)> = self.per_k.iter().map(|c| (c.k, c.loglik)).collect();
        argmin_k(&pairs, lambda)
    }
}

/// Fits every `k` in `[k_min, k_max]` with restarted EM and returns the
/// criterion minimizer (smallest `k` on ties). Candidates whose fits all fail
/// are kept in `per_k` with an infinite criterion.
pub fn select_k(data: &WeightedDataset, cfg: &SelectionConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    let ks: Vec<usize> = (cfg.k_min..=cfg.k_max).collect();
    let fits: Vec<(usize, Result<EmReport>)> = ks
        .par_iter()
        .map(|&k| {
            (
                k,
                run_em_restarts(data, k, cfg.restarts, cfg.max_iters, cfg.seed_for(k)),
            )
        })
        .collect();

    let mut per_k = Vec::with_capacity(fits.len());
    let mut reports = Vec::with_capacity(fits.len());
    for (k, fit) in fits {
        match fit {
            Ok(report) => {
                let ll = report.final_loglik();
                per_k.push(CandidateFit {
                    k,
                    loglik: Some(ll),
                    criterion: criterion(ll, k, cfg.lambda),
                    loglik_trace: report.loglik_trace.clone(),
                    iterations_run: report.iterations_run,
                    converged: report.converged,
                    failure: None,
                });
                reports.push(Some(report));
            }
            Err(e) => {
                per_k.push(CandidateFit {
                    k,
                    loglik: None,
                    criterion: f64::INFINITY,
                    loglik_trace: Vec::new(),
                    iterations_run: 0,
                    converged: false,
                    failure: Some(e.to_string()),
                });
                reports.push(None);
            }
        }
    }

    let pairs: Vec<(usize, Option<f64>)> = per_k.iter().map(|c| (c.k, c.loglik)).collect();
    let chosen_k = argmin_k(&pairs, cfg.lambda).ok_or(Error::NoFeasibleK)?;
    let idx = chosen_k - cfg.k_min;
    let chosen_params = reports[idx].take().expect("chosen candidate has a report").params;
    Ok(SelectionReport {
        chosen_k,
        chosen_params,
        lambda: cfg.lambda,
        per_k,
    })
}

/// Training-time policy: draw `K` uniformly from `{1, …, k_max}`.
pub fn sample_train_k<R: Rng + ?Sized>(rng: &mut R, k_max: usize) -> usize {
    rng.random_range(1..=k_max.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::grid_centers;
    use crate::gauss2d::{Gaussian2, Spd2, Vec2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn criterion_arithmetic() {
        assert_eq!(criterion(0.0, 1, 5.0), 5.0);
        assert!((criterion(-1.837_877, 2, 5.0) - 13.675_754).abs() < 1e-12);
    }

    #[test]
    fn default_config_is_test_time_recipe() {
        let cfg = SelectionConfig::default();
        assert_eq!((cfg.k_min, cfg.k_max, cfg.restarts, cfg.max_iters), (1, 4, 3, 10));
        assert_eq!(cfg.lambda, 5.0);
    }

    #[test]
    fn config_validation() {
        let cfg = SelectionConfig {
            k_min: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SelectionConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SelectionConfig {
            k_min: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn argmin_ties_and_exclusions() {
        // Criteria: k=1 → 5, k=2 → 5 (tie), k=3 excluded.
        let pairs = [(1, Some(0.0)), (2, Some(2.5)), (3, None)];
        assert_eq!(argmin_k(&pairs, 5.0), Some(1));
        assert_eq!(argmin_k(&[(1, None)], 5.0), None);
    }

    #[test]
    fn vanishing_penalty_picks_max_loglik() {
        let pairs = [(1, Some(1.0)), (2, Some(3.0)), (3, Some(2.0)), (4, Some(2.9))];
        assert_eq!(argmin_k(&pairs, 1e-12), Some(2));
    }

    #[test]
    fn single_tight_blob_selects_one_component() {
        let g = Gaussian2::new(Vec2::new(0.45, 0.55), Spd2::new(0.004, 0.001, 0.006).unwrap()).unwrap();
        let weights: Vec<f64> = grid_centers(24, 24).iter().map(|&x| g.pdf(x)).collect();
        let data = WeightedDataset::from_grid(24, 24, &weights).unwrap();
        let report = select_k(&data, &SelectionConfig::default()).unwrap();
        assert_eq!(report.chosen_k, 1);
        // Criteria re-derive from the stored fields.
        for c in &report.per_k {
            if let Some(ll) = c.loglik {
                assert_eq!(c.criterion, -2.0 * ll + 5.0 * c.k as f64);
            }
        }
        assert_eq!(report, select_k(&data, &SelectionConfig::default()).unwrap());
    }

    #[test]
    fn infeasible_k_is_excluded_not_fatal() {
        // Two positive-weight cells: k = 3, 4 cannot even be initialized.
        let mut weights = vec![0.0; 16];
        weights[0] = 1.0;
        weights[15] = 1.0;
        let data = WeightedDataset::from_grid(4, 4, &weights).unwrap();
        let report = select_k(&data, &SelectionConfig::default()).unwrap();
        assert!(report.per_k[2].loglik.is_none());
        assert_eq!(report.per_k[3].criterion, f64::INFINITY);
        assert!(report.chosen_k <= 2);
        let json = serde_json::to_string(&report).unwrap();
        let back: SelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.per_k[3].criterion, f64::INFINITY);
    }

    #[test]
    fn train_time_sampler_covers_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [0usize; 5];
        for _ in 0..4000 {
            seen[sample_train_k(&mut rng, 4)] += 1;
        }
        assert_eq!(seen[0], 0);
        for &count in &seen[1..] {
            assert!((800..1200).contains(&count), "{seen:?}");
        }
    }

    proptest! {
        #[test]
        fn chosen_k_non_increasing_in_lambda(lls in proptest::collection::vec(-20.0..20.0f64, 4)) {
            let pairs: Vec<(usize, Option<f64>)> =
                lls.iter().enumerate().map(|(i, &l)| (i + 1, Some(l))).collect();
            let mut prev = usize::MAX;
            for lambda in [0.1, 1.0, 5.0, 25.0, 125.0] {
                let k = argmin_k(&pairs, lambda).unwrap();
                prop_assert!(k <= prev);
                prev = k;
            }
        }
    }
}
