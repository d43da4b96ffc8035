use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use mmattn::selection::SelectionConfig;

use crate::CliError;

/// Settings shared by every subcommand. Defaults follow the test-time recipe:
/// a 10×10 RBF basis with variance 0.001, ridge 0.01, λ = 5, up to four
/// components, three restarts of ten EM iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub basis_side: usize,
    pub basis_var: f64,
    pub ridge: f64,
    pub lambda: f64,
    pub k_max: usize,
    pub iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Discretization grid used by `render`, `compare` and `demo`.
    pub height: usize,
    pub width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            basis_side: 10,
            basis_var: 0.001,
            ridge: 0.01,
            lambda: 5.0,
            k_max: 4,
            iters: 10,
            restarts: 3,
            seed: 0,
            height: 24,
            width: 24,
        }
    }
}

/// Flags that override [`RunConfig`] fields; `--config` names a JSON file
/// applied first.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with any subset of the config fields
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Penalty per mixture component in the selection criterion
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Largest number of components tried by model selection
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    /// EM restarts per candidate K
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// EM iterations per restart
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Ridge penalty for the feature regression
    #[arg(long, global = true)]
    pub ridge: Option<f64>,
    /// RBF lattice side (the basis has side² functions)
    #[arg(long, global = true)]
    pub basis_side: Option<usize>,
    /// Isotropic variance of each RBF
    #[arg(long, global = true)]
    pub basis_var: Option<f64>,
    /// Base seed for EM initialization and the demo's synthetic grids
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Discretization grid height
    #[arg(long, global = true)]
    pub height: Option<usize>,
    /// Discretization grid width
    #[arg(long, global = true)]
    pub width: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e.into()))?;
        serde_json::from_str(&text).map_err(|e| CliError::file(path, e.into()))
    }

    pub fn resolve(args: &ConfigArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = args.$field { cfg.$field = v; })*
            };
        }
        apply!(lambda, k_max, restarts, iters, ridge, basis_side, basis_var, seed, height, width);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Usage(msg.to_string()));
        if self.basis_side == 0 {
            return bad("basis_side must be positive");
        }
        if !(self.basis_var > 0.0 && self.basis_var.is_finite()) {
            return bad("basis_var must be positive");
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be positive");
        }
        if self.height == 0 || self.width == 0 {
            return bad("height and width must be positive");
        }
        self.selection(1, self.k_max).validate()?;
        Ok(())
    }

    pub fn selection(&self, k_min: usize, k_max: usize) -> SelectionConfig {
        SelectionConfig {
            k_min,
            k_max,
            lambda: self.lambda,
            restarts: self.restarts,
            max_iters: self.iters,
            base_seed: self.seed,
        }
    }
}
