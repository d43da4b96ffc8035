//! Discrete, unimodal and multimodal attention mechanisms.
//!
//! The continuous context is `c = E_p[B ψ(x)]`. For a Gaussian mixture
//! `p = Σ_k π_k N(μ_k, Σ_k)` and Gaussian RBFs this is
//! `c = Σ_k π_k B r_k` with `r_kj = N(μ_k; μ̃_j, Σ_k + Σ̃_j)`.

use nalgebra::{DMatrix, DVector};

use crate::basis::{FeatureFunction, FeatureGrid};
use crate::em::{floor_covariance, MixtureParams, WeightedDataset};
use crate::error::{Error, Result};
use crate::gauss2d::{product_integral, product_integral_grad, Gaussian2};

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentContext {
    pub pi: f64,
    pub context: DVector<f64>,
}

/// Output of an attention mechanism: the context vector and, for continuous
/// attention, the per-component contexts `c_k` it mixes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub value: DVector<f64>,
    pub per_component: Vec<ComponentContext>,
}

/// Derivatives of the context with respect to one component's parameters.
///
/// Covariance derivatives are over the `(a, b, c)` encoding of
/// `Σ = [[a, b], [b, c]]`, so the `b` column already carries the factor 2
/// from the two off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGradients {
    /// `∂c/∂π_k` (length D), the raw partial ignoring the simplex constraint.
    pub d_pi: DVector<f64>,
    /// `∂c/∂μ_k` (D × 2).
    pub d_mean: DMatrix<f64>,
    /// `∂c/∂(a, b, c)_k` (D × 3).
    pub d_cov: DMatrix<f64>,
    /// `upstreamᵀ ∂c/∂π_k`.
    pub vjp_pi: f64,
    /// `upstreamᵀ ∂c/∂μ_k`.
    pub vjp_mean: [f64; 2],
    /// `upstreamᵀ ∂c/∂(a, b, c)_k`.
    pub vjp_cov: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub components: Vec<ComponentGradients>,
}

/// Numerically stable softmax.
pub fn softmax_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `c = V p`.
pub fn discrete_context(grid: &FeatureGrid, p: &[f64]) -> Result<DVector<f64>> {
    if p.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "probability vector has length {}, grid has {} cells",
            p.len(),
            grid.len()
        )));
    }
    Ok(grid.features() * DVector::from_column_slice(p))
}

/// Unimodal fit by weighted moments, floored like the EM covariance update.
pub fn moment_match(data: &WeightedDataset) -> Result<Gaussian2> {
    let (mean, cov) = data.weighted_moments();
    Gaussian2::new(mean, floor_covariance(cov)?)
}

/// `r_j = E_g[ψ_j]` for every basis function.
fn expected_psi(f: &FeatureFunction, g: &Gaussian2) -> DVector<f64> {
    let comps = f.basis().components();
    DVector::from_iterator(comps.len(), comps.iter().map(|psi| product_integral(g, psi)))
}

/// `c = B r` with `r_j = E_g[ψ_j]`.
pub fn unimodal_context(f: &FeatureFunction, g: &Gaussian2) -> ContextVector {
    let value = f.coeffs() * expected_psi(f, g);
    ContextVector {
        per_component: vec![ComponentContext {
            pi: 1.0,
            context: value.clone(),
        }],
        value,
    }
}

/// `c = Σ_k π_k c_k` where `c_k` is the unimodal context of component `k`.
pub fn multimodal_context(f: &FeatureFunction, m: &MixtureParams) -> ContextVector {
    let mut value = DVector::zeros(f.dim());
    let mut per_component = Vec::with_capacity(m.k());
    for comp in m.components() {
        let ck = f.coeffs() * expected_psi(f, &comp.gaussian);
        value.axpy(comp.pi, &ck, 1.0);
        per_component.push(ComponentContext {
            pi: comp.pi,
            context: ck,
        });
    }
    ContextVector { value, per_component }
}

/// Closed-form Jacobians of [`multimodal_context`] and their contraction with
/// `upstream`.
pub fn multimodal_backward(
    f: &FeatureFunction,
    m: &MixtureParams,
    upstream: &DVector<f64>,
) -> Result<AttentionGradients> {
    let dim = f.dim();
    if upstream.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient has length {}, context has {dim}",
            upstream.len()
        )));
    }
    let basis = f.basis().components();
    let b = f.coeffs();
    let mut components = Vec::with_capacity(m.k());
    for comp in m.components() {
        // Per-basis derivatives of r_kj, arranged as N × 2 and N × 3 tables.
        let mut r = DVector::zeros(basis.len());
        let mut dr_mean = DMatrix::zeros(basis.len(), 2);
        let mut dr_cov = DMatrix::zeros(basis.len(), 3);
        for (j, psi) in basis.iter().enumerate() {
            let g = product_integral_grad(&comp.gaussian, psi);
            r[j] = g.value;
            dr_mean[(j, 0)] = g.dmean.u;
            dr_mean[(j, 1)] = g.dmean.v;
            let abc = g.dcov.to_abc_partials();
            for (col, v) in abc.into_iter().enumerate() {
                dr_cov[(j, col)] = v;
            }
        }
        let d_pi = b * &r;
        let d_mean = (b * dr_mean) * comp.pi;
        let d_cov = (b * dr_cov) * comp.pi;
        let vjp_pi = upstream.dot(&d_pi);
        let vm = d_mean.tr_mul(upstream);
        let vc = d_cov.tr_mul(upstream);
        components.push(ComponentGradients {
            vjp_pi,
            vjp_mean: [vm[0], vm[1]],
            vjp_cov: [vc[0], vc[1], vc[2]],
            d_pi,
            d_mean,
            d_cov,
        });
    }
    Ok(AttentionGradients { components })
}
