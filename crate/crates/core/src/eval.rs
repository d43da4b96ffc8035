//! Attention maps on grids and their Jensen–Shannon comparison.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::basis::cell_center;
use crate::em::MixtureParams;
use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`DensityGrid`].
pub const MASS_TOL: f64 = 1e-9;

/// A probability mass function over an `height × width` grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    height: usize,
    width: usize,
    mass: Vec<f64>,
}

impl DensityGrid {
    /// Accepts masses that are nonnegative and already sum to one.
    pub fn new(height: usize, width: usize, mass: Vec<f64>) -> Result<Self> {
        check_shape(height, width, &mass)?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("grid mass sums to {total}, expected 1")));
        }
        Ok(DensityGrid { height, width, mass })
    }

    /// Rescales nonnegative values to unit total mass.
    pub fn from_unnormalized(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(height, width, &values)?;
        let total: f64 = values.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument("grid has no positive mass".into()));
        }
        let mass = values.into_iter().map(|v| v / total).collect();
        Ok(DensityGrid { height, width, mass })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mass[row * self.width + col]
    }

    /// One line per grid row, comma-separated, values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.mass.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    /// Parses an `H × W` CSV of nonnegative values. Grids that already sum to
    /// one (within `MASS_TOL`) are kept as written; others are normalized.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: invalid number {:?}", i + 1, s.trim())))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} columns, got {}",
                        i + 1,
                        first.len(),
                        row.len()
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse("empty density grid".into()));
        }
        let (height, width) = (rows.len(), rows[0].len());
        let values = rows.concat();
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() <= MASS_TOL {
            DensityGrid::new(height, width, values)
        } else {
            DensityGrid::from_unnormalized(height, width, values)
        }
    }

    /// Binary PGM (P5), intensities scaled so the largest cell is 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.mass.iter().copied().fold(0.0f64, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.mass.iter().map(|&m| {
            if max > 0.0 {
                (255.0 * m / max).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        out
    }
}

fn check_shape(height: usize, width: usize, values: &[f64]) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
    }
    if height.checked_mul(width) != Some(values.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width} grid does not match {} cells",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid values must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// Mixture density at each cell center times the cell area, renormalized.
/// Also returns the total mass before renormalization.
pub fn discretize_with_mass(m: &MixtureParams, height: usize, width: usize) -> Result<(DensityGrid, f64)> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
    }
    let area = 1.0 / (height * width) as f64;
    let logs: Vec<f64> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| m.log_pdf(cell_center(r, c, height, width)))
        .collect();
    // Work relative to the largest log-density so far-off mixtures do not
    // underflow to an all-zero grid.
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let rel_total: f64 = rel.iter().sum();
    let raw_total = rel_total * max.exp() * area;
    let mass = rel.into_iter().map(|v| v / rel_total).collect();
    Ok((DensityGrid { height, width, mass }, raw_total))
}

pub fn discretize(m: &MixtureParams, height: usize, width: usize) -> Result<DensityGrid> {
    Ok(discretize_with_mass(m, height, width)?.0)
}

/// `a · log₂(a / m)` with the `0 · log 0 = 0` convention.
fn kl_term(a: f64, m: f64) -> f64 {
    if a > 0.0 {
        a * (a / m).log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen–Shannon divergence, in `[0, 1]`.
///
/// Each cell's two KL terms are added before accumulating, which makes the
/// result exactly symmetric in its arguments.
pub fn js_divergence(p: &DensityGrid, q: &DensityGrid) -> Result<f64> {
    if p.height != q.height || p.width != q.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} grid compared with {}x{} grid",
            p.height, p.width, q.height, q.width
        )));
    }
    let total: f64 = p
        .mass
        .iter()
        .zip(&q.mass)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            kl_term(a, m) + kl_term(b, m)
        })
        .sum();
    Ok(0.5 * total)
}

/// Candidates ranked by ascending JS divergence from `reference` (stable for ties).
pub fn compare_models(reference: &DensityGrid, candidates: &[(String, DensityGrid)]) -> Result<Vec<(String, f64)>> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for (name, grid) in candidates {
        let js =
            js_divergence(reference, grid).map_err(|e| Error::DimensionMismatch(format!("candidate {name:?}: {e}")))?;
        ranked.push((name.clone(), js));
    }
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
    Ok(ranked)
}
