//! End-to-end synthetic runs: blob grids with a known number of components
//! go through fit, forward, render and compare, and every trial's selected
//! `K` feeds a recovery table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mmattn::attention::moment_match;
use mmattn::em::MixtureParams;
use mmattn::eval::{discretize, js_divergence, DensityGrid};
use mmattn::io::{features_to_csv, to_json_string, WeightGridFile};
use mmattn::selection::sample_train_k;
use mmattn::synth::{blob_grid, smooth_features, BlobGrid, BlobSpec};

use crate::commands::{fit_dataset, forward, rank, ranking_tsv, render_bytes, InputDigest, RenderFormat};
use crate::config::RunConfig;
use crate::CliError;

pub const FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub out: PathBuf,
    pub trials: usize,
    pub train_time_k: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub true_k: usize,
    pub trials: usize,
    pub recovered: usize,
    pub rate: f64,
    /// `chosen[i]` counts trials that selected `K = i + 1`.
    pub chosen: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowcaseRow {
    pub true_k: usize,
    pub chosen_k: usize,
    pub js_fit: f64,
    pub js_unimodal: f64,
    pub js_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTimeRow {
    pub trial: usize,
    pub true_k: usize,
    pub sampled_k: usize,
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub trials: usize,
    pub config: RunConfig,
    pub recovery: Vec<RecoveryRow>,
    pub showcase: Vec<ShowcaseRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_time: Option<Vec<TrainTimeRow>>,
}

/// Seed for trial `t` of true component count `k`.
pub fn trial_seed(seed: u64, k: usize, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 48) ^ t as u64
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e.into()))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::file(path, e.into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write(path, to_json_string(value)?.as_bytes())
}

fn uniform_grid(height: usize, width: usize) -> Result<DensityGrid, CliError> {
    Ok(DensityGrid::from_unnormalized(
        height,
        width,
        vec![1.0; height * width],
    )?)
}

fn weights_file(blobs: &BlobGrid) -> WeightGridFile {
    WeightGridFile {
        height: blobs.height,
        width: blobs.width,
        weights: blobs.weights.clone(),
    }
}

/// Writes the fixtures and every pipeline output for one trial.
fn showcase(
    dir: &Path,
    blobs: &BlobGrid,
    fit_mixture: &MixtureParams,
    bundle_json: &str,
    features: &mmattn::basis::FeatureGrid,
    cfg: &RunConfig,
    chosen_k: usize,
) -> Result<ShowcaseRow, CliError> {
    let (h, w) = (blobs.height, blobs.width);
    write_json(&dir.join("truth.json"), &blobs.truth)?;
    write(&dir.join("fit.json"), bundle_json.as_bytes())?;

    let context = forward(features, fit_mixture, cfg, true, None)?;
    write_json(&dir.join("context.json"), &context)?;

    write(
        &dir.join("truth.pgm"),
        &render_bytes(&blobs.truth, h, w, RenderFormat::Pgm)?,
    )?;
    write(
        &dir.join("fit.pgm"),
        &render_bytes(fit_mixture, h, w, RenderFormat::Pgm)?,
    )?;

    let reference = discretize(&blobs.truth, h, w)?;
    let unimodal = MixtureParams::single(moment_match(&blobs.dataset()?)?);
    let candidates = vec![
        ("fit".to_string(), discretize(fit_mixture, h, w)?),
        ("unimodal".to_string(), discretize(&unimodal, h, w)?),
        ("uniform".to_string(), uniform_grid(h, w)?),
    ];
    let ranked = rank(&reference, &candidates)?;
    write_json(&dir.join("compare.json"), &ranked)?;
    write(&dir.join("compare.tsv"), ranking_tsv(&ranked).as_bytes())?;

    let js_of = |name: &str| ranked.iter().find(|r| r.name == name).map(|r| r.js).unwrap_or(f64::NAN);
    Ok(ShowcaseRow {
        true_k: blobs.truth.k(),
        chosen_k,
        js_fit: js_of("fit"),
        js_unimodal: js_of("unimodal"),
        js_uniform: js_of("uniform"),
    })
}

pub fn recovery_tsv(rows: &[RecoveryRow]) -> String {
    let k_max = rows.first().map(|r| r.chosen.len()).unwrap_or(0);
    let mut out = String::from("true_k\ttrials\trecovered\trate");
    for k in 1..=k_max {
        let _ = write!(out, "\tchose_{k}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}\t{}\t{}\t{:.4}", r.true_k, r.trials, r.recovered, r.rate);
        for c in &r.chosen {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    out
}

/// Runs `opts.trials` seeded trials for each true `K` in `1..=k_max` and
/// writes fixtures, outputs and summaries under `opts.out`.
pub fn run_demo(opts: &DemoOptions, cfg: &RunConfig) -> Result<DemoSummary, CliError> {
    let spec = BlobSpec {
        height: cfg.height,
        width: cfg.width,
        ..BlobSpec::default()
    };
    let features = smooth_features(cfg.height, cfg.width, FEATURE_DIM, cfg.seed)?;
    write(
        &opts.out.join("fixtures/features.csv"),
        features_to_csv(&features).as_bytes(),
    )?;

    let mut recovery = Vec::new();
    let mut showcase_rows = Vec::new();
    let mut train_time = Vec::new();
    let mut k_rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for true_k in 1..=cfg.k_max {
        let mut chosen = vec![0usize; cfg.k_max];
        for t in 0..opts.trials {
            let seed = trial_seed(cfg.seed, true_k, t);
            let blobs = blob_grid(true_k, &spec, seed)?;
            let data = blobs.dataset()?;
            let trial_cfg = RunConfig { seed, ..cfg.clone() };

            let weights_json = to_json_string(&weights_file(&blobs))?;
            let inputs = vec![InputDigest::of("weights.json", weights_json.as_bytes())];
            let bundle = fit_dataset(&data, inputs, &trial_cfg, None)?;
            chosen[bundle.chosen_k - 1] += 1;

            if t == 0 {
                let dir = opts.out.join(format!("k{true_k}"));
                write(&dir.join("weights.json"), weights_json.as_bytes())?;
                let bundle_json = to_json_string(&bundle)?;
                showcase_rows.push(showcase(
                    &dir,
                    &blobs,
                    &bundle.mixture,
                    &bundle_json,
                    &features,
                    &trial_cfg,
                    bundle.chosen_k,
                )?);
            }

            if opts.train_time_k {
                let sampled_k = sample_train_k(&mut k_rng, cfg.k_max);
                let fixed = fit_dataset(&data, Vec::new(), &trial_cfg, Some(sampled_k))?;
                let js = js_divergence(
                    &discretize(&blobs.truth, spec.height, spec.width)?,
                    &discretize(&fixed.mixture, spec.height, spec.width)?,
                )?;
                train_time.push(TrainTimeRow {
                    trial: t,
                    true_k,
                    sampled_k,
                    js,
                });
            }
        }
        let recovered = chosen[true_k - 1];
        recovery.push(RecoveryRow {
            true_k,
            trials: opts.trials,
            recovered,
            rate: if opts.trials > 0 {
                recovered as f64 / opts.trials as f64
            } else {
                0.0
            },
            chosen,
        });
    }

    write(&opts.out.join("recovery.tsv"), recovery_tsv(&recovery).as_bytes())?;
    write_json(&opts.out.join("recovery.json"), &recovery)?;
    if opts.train_time_k {
        let mut tsv = String::from("trial\ttrue_k\tsampled_k\tjs\n");
        for r in &train_time {
            let _ = writeln!(tsv, "{}\t{}\t{}\t{:.16e}", r.trial, r.true_k, r.sampled_k, r.js);
        }
        write(&opts.out.join("train_time.tsv"), tsv.as_bytes())?;
    }

    let summary = DemoSummary {
        seed: cfg.seed,
        trials: opts.trials,
        config: cfg.clone(),
        recovery,
        showcase: showcase_rows,
        train_time: opts.train_time_k.then_some(train_time),
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    Ok(summary)
}
