use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mmattn::attention::{multimodal_backward, multimodal_context, AttentionGradients, ContextVector};
use mmattn::basis::{fit_ridge, make_grid_basis, FeatureGrid};
use mmattn::em::{MixtureParams, WeightedDataset};
use mmattn::eval::{compare_models, discretize, DensityGrid};
use mmattn::io::{load_feature_grid, parse_weights};
use mmattn::selection::{select_k, SelectionReport};

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL_NAME: &str = "mmattn";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        InputDigest {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub config: RunConfig,
    pub seed: u64,
    pub fixed_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBundle {
    pub chosen_k: usize,
    pub mixture: MixtureParams,
    pub selection: SelectionReport,
    pub provenance: Provenance,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_text(path: &Path) -> Result<(Vec<u8>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path, e.into()))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::file(path, mmattn::Error::Parse("file is not UTF-8".into())))?;
    Ok((bytes, text))
}

/// Model selection over `1..=k_max`, or a single fixed `K` when given.
pub fn fit_dataset(
    data: &WeightedDataset,
    inputs: Vec<InputDigest>,
    cfg: &RunConfig,
    fixed_k: Option<usize>,
) -> Result<FitBundle, CliError> {
    let sel = match fixed_k {
        Some(k) => cfg.selection(k, k),
        None => cfg.selection(1, cfg.k_max),
    };
    let report = select_k(data, &sel)?;
    Ok(FitBundle {
        chosen_k: report.chosen_k,
        mixture: report.chosen_params.clone(),
        selection: report,
        provenance: Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            inputs,
            config: cfg.clone(),
            seed: cfg.seed,
            fixed_k,
        },
    })
}

pub fn cmd_fit(weights_path: &Path, cfg: &RunConfig, fixed_k: Option<usize>) -> Result<FitBundle, CliError> {
    let (bytes, text) = read_text(weights_path)?;
    let data = parse_weights(&text).map_err(|e| CliError::file(weights_path, e))?;
    let inputs = vec![InputDigest::of(&file_name(weights_path), &bytes)];
    fit_dataset(&data, inputs, cfg, fixed_k)
}

/// Reads a mixture from either a bare mixture file or a fit bundle.
pub fn load_mixture(path: &Path) -> Result<MixtureParams, CliError> {
    let (_, text) = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::file(path, e.into()))?;
    let inner = match value.get("mixture") {
        Some(m) => m.clone(),
        None => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::file(path, e.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentOutput {
    pub pi: f64,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientOutput {
    pub d_pi: Vec<f64>,
    /// One `[∂/∂μ_u, ∂/∂μ_v]` row per context dimension.
    pub d_mean: Vec<[f64; 2]>,
    /// One `[∂/∂a, ∂/∂b, ∂/∂c]` row per context dimension.
    pub d_cov: Vec<[f64; 3]>,
    pub vjp_pi: f64,
    pub vjp_mean: [f64; 2],
    pub vjp_cov: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub dim: usize,
    pub k: usize,
    pub value: Vec<f64>,
    pub per_component: Vec<ComponentOutput>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upstream: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradients: Option<Vec<GradientOutput>>,
}

impl ForwardOutput {
    fn new(ctx: &ContextVector, m: &MixtureParams) -> Self {
        ForwardOutput {
            dim: ctx.value.len(),
            k: m.k(),
            value: ctx.value.iter().copied().collect(),
            per_component: ctx
                .per_component
                .iter()
                .map(|c| ComponentOutput {
                    pi: c.pi,
                    context: c.context.iter().copied().collect(),
                })
                .collect(),
            upstream: None,
            gradients: None,
        }
    }

    fn with_gradients(mut self, upstream: &DVector<f64>, grads: &AttentionGradients) -> Self {
        self.upstream = Some(upstream.iter().copied().collect());
        self.gradients = Some(
            grads
                .components
                .iter()
                .map(|g| GradientOutput {
                    d_pi: g.d_pi.iter().copied().collect(),
                    d_mean: g.d_mean.row_iter().map(|r| [r[0], r[1]]).collect(),
                    d_cov: g.d_cov.row_iter().map(|r| [r[0], r[1], r[2]]).collect(),
                    vjp_pi: g.vjp_pi,
                    vjp_mean: g.vjp_mean,
                    vjp_cov: g.vjp_cov,
                })
                .collect(),
        );
        self
    }
}

/// Ridge-fits the feature grid and evaluates the mixture's context vector.
/// `upstream` (or all ones when only `grad` is set) adds gradients.
pub fn forward(
    grid: &FeatureGrid,
    m: &MixtureParams,
    cfg: &RunConfig,
    grad: bool,
    upstream: Option<Vec<f64>>,
) -> Result<ForwardOutput, CliError> {
    let basis = make_grid_basis(cfg.basis_side, cfg.basis_var)?;
    let f = fit_ridge(grid, &basis, cfg.ridge)?;
    let ctx = multimodal_context(&f, m);
    let out = ForwardOutput::new(&ctx, m);
    if !grad && upstream.is_none() {
        return Ok(out);
    }
    let up = match upstream {
        Some(u) => DVector::from_vec(u),
        None => DVector::from_element(f.dim(), 1.0),
    };
    let grads = multimodal_backward(&f, m, &up)?;
    Ok(out.with_gradients(&up, &grads))
}

pub fn cmd_forward(
    features_path: &Path,
    mixture_path: &Path,
    cfg: &RunConfig,
    grad: bool,
    upstream: Option<Vec<f64>>,
) -> Result<ForwardOutput, CliError> {
    let grid = load_feature_grid(features_path).map_err(|e| CliError::file(features_path, e))?;
    let m = load_mixture(mixture_path)?;
    forward(&grid, &m, cfg, grad, upstream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RenderFormat {
    Pgm,
    Csv,
}

impl RenderFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RenderFormat::Csv,
            _ => RenderFormat::Pgm,
        }
    }
}

pub fn render_bytes(m: &MixtureParams, height: usize, width: usize, format: RenderFormat) -> Result<Vec<u8>, CliError> {
    let grid = discretize(m, height, width)?;
    Ok(match format {
        RenderFormat::Pgm => grid.to_pgm(),
        RenderFormat::Csv => grid.to_csv().into_bytes(),
    })
}

pub fn cmd_render(mixture_path: &Path, cfg: &RunConfig, format: RenderFormat) -> Result<Vec<u8>, CliError> {
    let m = load_mixture(mixture_path)?;
    render_bytes(&m, cfg.height, cfg.width, format)
}

/// A density grid from CSV, or a mixture (or fit bundle) discretized at
/// `shape`.
pub fn load_grid(path: &Path, shape: (usize, usize)) -> Result<DensityGrid, CliError> {
    let (_, text) = read_text(path)?;
    if text.trim_start().starts_with('{') {
        let m = load_mixture(path)?;
        Ok(discretize(&m, shape.0, shape.1)?)
    } else {
        DensityGrid::from_csv(&text).map_err(|e| CliError::file(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub name: String,
    pub js: f64,
}

pub fn rank(reference: &DensityGrid, candidates: &[(String, DensityGrid)]) -> Result<Vec<RankedCandidate>, CliError> {
    Ok(compare_models(reference, candidates)?
        .into_iter()
        .enumerate()
        .map(|(i, (name, js))| RankedCandidate { rank: i + 1, name, js })
        .collect())
}

pub fn cmd_compare(
    reference: &Path,
    candidates: &[PathBuf],
    cfg: &RunConfig,
) -> Result<Vec<RankedCandidate>, CliError> {
    if candidates.is_empty() {
        return Err(CliError::Usage(
            "compare needs at least one candidate: mmattn compare <REFERENCE> <CANDIDATE>...".into(),
        ));
    }
    let ref_grid = load_grid(reference, (cfg.height, cfg.width))?;
    let shape = (ref_grid.height(), ref_grid.width());
    let mut grids = Vec::with_capacity(candidates.len());
    for path in candidates {
        let grid = load_grid(path, shape)?;
        if (grid.height(), grid.width()) != shape {
            return Err(CliError::file(
                path,
                mmattn::Error::DimensionMismatch(format!(
                    "{}x{} grid, reference is {}x{}",
                    grid.height(),
                    grid.width(),
                    shape.0,
                    shape.1
                )),
            ));
        }
        grids.push((path.display().to_string(), grid));
    }
    rank(&ref_grid, &grids)
}

pub fn ranking_tsv(ranked: &[RankedCandidate]) -> String {
    let mut out = String::from("rank\tname\tjs\n");
    for r in ranked {
        out.push_str(&format!("{}\t{}\t{:.16e}\n", r.rank, r.name, r.js));
    }
    out
}
