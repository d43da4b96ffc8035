//! Seeded synthetic fixtures: weighted grids with known component counts and
//! smooth feature maps.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{grid_centers, FeatureGrid};
use crate::em::{Component, MixtureParams, WeightedDataset};
use crate::error::{Error, Result};
use crate::gauss2d::{Gaussian2, Spd2, Vec2};

/// Shape of a synthetic multi-blob weight grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub height: usize,
    pub width: usize,
    /// Blob standard deviation as a fraction of a cell side.
    pub sigma_cells: f64,
    /// Minimum distance between blob centers.
    pub min_separation: f64,
    /// Blob centers stay at least this far from the border.
    pub margin: f64,
}

impl Default for BlobSpec {
    /// A 24×24 attention grid with sub-cell blobs spread far apart.
    ///
    /// With unit-sum weights the penalty `λ k` at `λ = 5` only favors an extra
    /// component when the log-likelihood gain exceeds 2.5 nats; for four equal
    /// blobs that requires roughly 0.6 of separation between near-point masses.
    fn default() -> Self {
        BlobSpec {
            height: 24,
            width: 24,
            sigma_cells: 0.25,
            min_separation: 0.65,
            margin: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobGrid {
    pub height: usize,
    pub width: usize,
    /// Row-major cell weights (unnormalized densities).
    pub weights: Vec<f64>,
    /// The generating mixture (equal weights, isotropic blobs).
    pub truth: MixtureParams,
}

impl BlobGrid {
    pub fn dataset(&self) -> Result<WeightedDataset> {
        WeightedDataset::from_grid(self.height, self.width, &self.weights)
    }
}

/// Draws `k` equal-weight isotropic blobs centered on distinct cells at least
/// `min_separation` apart and evaluates their mixture density at every cell.
pub fn blob_grid(k: usize, spec: &BlobSpec, seed: u64) -> Result<BlobGrid> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one blob".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let cell = 1.0 / h.max(w) as f64;
    let sigma = spec.sigma_cells * cell;
    let cov = Spd2::isotropic(sigma * sigma)?;

    let candidates: Vec<Vec2> = grid_centers(h, w)
        .into_iter()
        .filter(|x| [x.u, x.v].iter().all(|&c| c >= spec.margin && c <= 1.0 - spec.margin))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("margin leaves no cells".into()));
    }
    // Sequential placement can paint itself into a corner; start over when a
    // blob finds no room after a bounded number of draws.
    let mut centers: Vec<Vec2> = Vec::with_capacity(k);
    let mut placed = false;
    for _ in 0..1000 {
        centers.clear();
        for _ in 0..k {
            let found = (0..200).find_map(|_| {
                let x = candidates[rng.random_range(0..candidates.len())];
                centers
                    .iter()
                    .all(|c| (*c - x).norm() >= spec.min_separation)
                    .then_some(x)
            });
            match found {
                Some(x) => centers.push(x),
                None => break,
            }
        }
        if centers.len() == k {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::InvalidArgument(format!(
            "could not place {k} blobs with separation {}",
            spec.min_separation
        )));
    }
    let pi = 1.0 / k as f64;
    let truth = MixtureParams::new(
        centers
            .iter()
            .map(|&mean| {
                Ok(Component {
                    pi,
                    gaussian: Gaussian2::new(mean, cov)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let weights = grid_centers(h, w).into_iter().map(|x| truth.pdf(x)).collect();
    Ok(BlobGrid {
        height: h,
        width: w,
        weights,
        truth,
    })
}

/// A smooth random feature map: each feature is a constant plus a few
/// Gaussian bumps, sampled at the cell centers.
pub fn smooth_features(height: usize, width: usize, dim: usize, seed: u64) -> Result<FeatureGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = grid_centers(height, width);
    let mut features = DMatrix::zeros(dim, centers.len());
    for d in 0..dim {
        let offset: f64 = rng.random_range(-0.5..0.5);
        let bumps: Vec<(Vec2, f64, f64)> = (0..3)
            .map(|_| {
                (
                    Vec2::new(rng.random(), rng.random()),
                    rng.random_range(0.05..0.3),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        for (l, &x) in centers.iter().enumerate() {
            features[(d, l)] = offset
                + bumps
                    .iter()
                    .map(|(c, s, a)| a * (-(x - *c).dot(x - *c) / (2.0 * s * s)).exp())
                    .sum::<f64>();
        }
    }
    FeatureGrid::from_cells(height, width, features)
}
