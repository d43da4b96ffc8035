//! Gaussian RBF bases and the continuous feature function `V_B(x) = B ψ(x)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss2d::{pdf, Gaussian2, Spd2, Vec2};

/// Largest condition number accepted for the regularized normal equations.
pub const MAX_CONDITION: f64 = 1e14;

/// Maximum relative residual of the solved normal equations.
pub const MAX_RELATIVE_RESIDUAL: f64 = 1e-8;

/// Center of cell `(row, col)` of an `height × width` grid mapped to the unit
/// square: `((col + ½) / width, (row + ½) / height)`.
pub fn cell_center(row: usize, col: usize, height: usize, width: usize) -> Vec2 {
    Vec2::new((col as f64 + 0.5) / width as f64, (row as f64 + 0.5) / height as f64)
}

/// All cell centers of a grid in row-major order.
pub fn grid_centers(height: usize, width: usize) -> Vec<Vec2> {
    (0..height)
        .flat_map(|row| (0..width).map(move |col| cell_center(row, col, height, width)))
        .collect()
}

/// `N` Gaussian radial basis functions `ψ_j = N(·; μ̃_j, Σ̃_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    components: Vec<Gaussian2>,
}

impl RbfBasis {
    pub fn new(components: Vec<Gaussian2>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("RBF basis needs at least one component".into()));
        }
        Ok(RbfBasis { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Gaussian2] {
        &self.components
    }

    /// Design matrix `Ψ[j, ℓ] = ψ_j(x_ℓ)` of shape `N × L`.
    pub fn design_matrix(&self, locations: &[Vec2]) -> DMatrix<f64> {
        let mut psi = DMatrix::zeros(self.len(), locations.len());
        for (l, &x) in locations.iter().enumerate() {
            for (j, g) in self.components.iter().enumerate() {
                psi[(j, l)] = pdf(g, x);
            }
        }
        psi
    }
}

/// `side × side` isotropic Gaussians with means on a lattice spanning the unit
/// square (endpoints included) and covariance `var · I`.
///
/// Components are ordered row by row: index `iv * side + iu` has mean
/// `(iu / (side − 1), iv / (side − 1))`. A single component sits at the center.
pub fn make_grid_basis(side: usize, var: f64) -> Result<RbfBasis> {
    if side == 0 {
        return Err(Error::InvalidArgument("basis side must be at least 1".into()));
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "basis variance must be positive, got {var}"
        )));
    }
    let cov = Spd2::isotropic(var)?;
    let coord = |i: usize| {
        if side == 1 {
            0.5
        } else {
            i as f64 / (side - 1) as f64
        }
    };
    let mut components = Vec::with_capacity(side * side);
    for iv in 0..side {
        for iu in 0..side {
            components.push(Gaussian2::new(Vec2::new(coord(iu), coord(iv)), cov)?);
        }
    }
    RbfBasis::new(components)
}

/// `ψ(x)`, the vector of basis densities at `x`.
pub fn eval_psi(basis: &RbfBasis, x: Vec2) -> DVector<f64> {
    DVector::from_iterator(basis.len(), basis.components.iter().map(|g| pdf(g, x)))
}

/// Discrete features `V ∈ R^{D×L}` attached to `L` locations in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    locations: Vec<Vec2>,
    features: DMatrix<f64>,
}

impl FeatureGrid {
    pub fn new(locations: Vec<Vec2>, features: DMatrix<f64>) -> Result<Self> {
        if locations.is_empty() || features.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "feature grid must have L >= 1 and D >= 1".into(),
            ));
        }
        if locations.len() != features.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} locations but {} feature columns",
                locations.len(),
                features.ncols()
            )));
        }
        if let Some(x) = locations
            .iter()
            .find(|x| !(x.is_finite() && (0.0..=1.0).contains(&x.u) && (0.0..=1.0).contains(&x.v)))
        {
            return Err(Error::InvalidArgument(format!(
                "location ({}, {}) lies outside the unit square",
                x.u, x.v
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(FeatureGrid { locations, features })
    }

    /// Features for an `height × width` grid given as a `D × (H·W)` matrix
    /// whose columns are cells in row-major order.
    pub fn from_cells(height: usize, width: usize, features: DMatrix<f64>) -> Result<Self> {
        FeatureGrid::new(grid_centers(height, width), features)
    }

    pub fn locations(&self) -> &[Vec2] {
        &self.locations
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// `V_B(x) = B ψ(x)` with `B ∈ R^{D×N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFunction {
    basis: RbfBasis,
    coeffs: DMatrix<f64>,
}

impl FeatureFunction {
    pub fn new(basis: RbfBasis, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.ncols() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix has {} columns, basis has {} functions",
                coeffs.ncols(),
                basis.len()
            )));
        }
        if coeffs.nrows() == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        Ok(FeatureFunction { basis, coeffs })
    }

    pub fn basis(&self) -> &RbfBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }
}

/// Ridge regression of the grid features onto the basis:
/// `B = V Ψᵀ (Ψ Ψᵀ + penalty · I)⁻¹`.
///
/// Solves the `N × N` system by Cholesky factorization.
pub fn fit_ridge(grid: &FeatureGrid, basis: &RbfBasis, penalty: f64) -> Result<FeatureFunction> {
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty must be positive, got {penalty}"
        )));
    }
    let n = basis.len();
    let psi = basis.design_matrix(grid.locations());
    let mut gram = &psi * psi.transpose();
    for j in 0..n {
        gram[(j, j)] += penalty;
    }
    let rhs = &psi * grid.features().transpose();

    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }

    let chol = gram.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    let solution = chol.solve(&rhs);

    let rhs_norm = rhs.norm();
    if rhs_norm > 0.0 {
        let residual = (&gram * &solution - &rhs).norm() / rhs_norm;
        if !(residual < MAX_RELATIVE_RESIDUAL) {
            return Err(Error::IllConditioned { condition });
        }
    }
    FeatureFunction::new(basis.clone(), solution.transpose())
}

/// `V_B(x) = B ψ(x)`.
pub fn eval_feature(f: &FeatureFunction, x: Vec2) -> DVector<f64> {
    &f.coeffs * eval_psi(&f.basis, x)
}
