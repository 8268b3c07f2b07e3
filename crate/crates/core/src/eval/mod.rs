//! AUC, seed replication and the two study protocols (δ sweep and
//! behaviour-length ablation), with CSV and JSON outputs.

mod auc;

pub use auc::auc;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::training::{train, TrainConfig};

pub const DEFAULT_SEED_COUNT: usize = 5;
pub const ABLATION_LENGTHS: [usize; 3] = [10, 20, 50];

pub const CSV_HEADER: &str = "experiment,model,dataset,seed,delta,lambda,l,auc";

/// δ ∈ {0.1, 0.2, …, 1.0}, each computed as k/10.
pub fn sweep_deltas() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

/// `count` consecutive seeds starting at `base`.
pub fn seeds_from(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    /// Base model name, suffixed `+iacn` when the auxiliary task is on.
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub iacn: bool,
    /// Effective mixing ratio (1 without the auxiliary task).
    pub delta: f64,
    /// Effective interest-loss weight (0 without the auxiliary task).
    pub lambda: f64,
    /// Behaviour sequence cap.
    pub l: usize,
    pub k_policy: String,
    pub auc: f64,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.experiment, self.model, self.dataset, self.seed, self.delta, self.lambda, self.l, self.auc
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn replicate(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Config(format!(
            "replication needs at least 2 seeds, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Trains one configuration and reports its test AUC.
pub fn run_one(experiment: &str, config: &TrainConfig, data: &Dataset) -> Result<MetricRow> {
    let (report, _) = train(config, data)?;
    let auc = report
        .test_auc
        .ok_or_else(|| Error::Config(format!("dataset `{}` has no test split", data.tag)))?;
    Ok(metric_row(experiment, config, &data.tag, auc))
}

/// One metrics row for a finished run, echoing the effective hyperparameters.
pub fn metric_row(experiment: &str, config: &TrainConfig, dataset: &str, auc: f64) -> MetricRow {
    let model = if config.iacn {
        format!("{}+iacn", config.base_model)
    } else {
        config.base_model.to_string()
    };
    MetricRow {
        experiment: experiment.to_string(),
        model,
        dataset: dataset.to_string(),
        seed: config.seed,
        iacn: config.iacn,
        delta: if config.iacn { config.delta } else { 1.0 },
        lambda: if config.iacn { config.lambda } else { 0.0 },
        l: config.max_len,
        k_policy: format!("clamp(floor(log2 n), {}, {})", config.k_min, config.k_max),
        auc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub mean_auc: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// Called with all rows so far after every finished run, so a failure
/// later on still leaves the completed runs on disk.
pub type Progress<'a> = dyn FnMut(&[MetricRow]) -> Result<()> + 'a;

/// Trains with the auxiliary task at every δ in [`sweep_deltas`] and every
/// seed.
pub fn delta_sweep(
    base: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    progress: &mut Progress<'_>,
) -> Result<(SweepResult, Vec<MetricRow>)> {
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    for delta in sweep_deltas() {
        let mut aucs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig {
                iacn: true,
                delta,
                seed,
                ..base.clone()
            };
            let row = run_one("delta_sweep", &config, data)?;
            log::info!("delta {delta} seed {seed}: auc {:.4}", row.auc);
            aucs.push(row.auc);
            rows.push(row);
            progress(&rows)?;
        }
        let (mean_auc, sd) = replicate(&aucs)?;
        sweep.push(SweepRow { delta, mean_auc, sd });
    }
    Ok((
        SweepResult {
            dataset: data.tag.clone(),
            seeds: seeds.to_vec(),
            rows: sweep,
        },
        rows,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub model: String,
    pub l: usize,
    pub mean_auc: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
    /// Row-major: model (base, base + interest task) by length.
    pub cells: Vec<AblationCell>,
}

impl AblationResult {
    pub fn cell(&self, model: &str, l: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.model == model && c.l == l)
    }
}

/// For each l in [`ABLATION_LENGTHS`], generates the synthetic dataset with
/// sequence length l and trains the base model with and without the
/// auxiliary task over every seed.
pub fn length_ablation(
    base: &TrainConfig,
    spec: &SyntheticSpec,
    seeds: &[u64],
    progress: &mut Progress<'_>,
) -> Result<(AblationResult, Vec<MetricRow>)> {
    let mut rows = Vec::new();
    let mut per_cell: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for &l in &ABLATION_LENGTHS {
        let data = generate_synthetic(&SyntheticSpec {
            seq_len: l,
            ..spec.clone()
        })?
        .dataset;
        for iacn in [false, true] {
            let mut aucs = Vec::with_capacity(seeds.len());
            let mut name = String::new();
            for &seed in seeds {
                let config = TrainConfig {
                    iacn,
                    max_len: l,
                    seed,
                    ..base.clone()
                };
                let row = run_one("length_ablation", &config, &data)?;
                log::info!("l {l} {} seed {seed}: auc {:.4}", row.model, row.auc);
                aucs.push(row.auc);
                name = row.model.clone();
                rows.push(row);
                progress(&rows)?;
            }
            per_cell.push((name, l, aucs));
        }
    }
    // Reorder to model-major.
    let mut cells = Vec::with_capacity(per_cell.len());
    for want_iacn in [false, true] {
        for (name, l, aucs) in &per_cell {
            if name.ends_with("+iacn") == want_iacn {
                let (mean_auc, sd) = replicate(aucs)?;
                cells.push(AblationCell {
                    model: name.clone(),
                    l: *l,
                    mean_auc,
                    sd,
                });
            }
        }
    }
    Ok((
        AblationResult {
            seeds: seeds.to_vec(),
            lengths: ABLATION_LENGTHS.to_vec(),
            cells,
        },
        rows,
    ))
}

/// Plain-text table of a sweep: one line per δ with mean ± SD.
pub fn format_sweep(s: &SweepResult) -> String {
    let mut out = String::from("delta  mean_auc  sd\n");
    for r in &s.rows {
        out.push_str(&format!("{:.1}    {:.4}    {:.4}\n", r.delta, r.mean_auc, r.sd));
    }
    out
}

/// Plain-text 2 × 3 table of the length ablation.
pub fn format_ablation(a: &AblationResult) -> String {
    let mut out = String::from("model");
    for l in &a.lengths {
        out.push_str(&format!("\tl={l}"));
    }
    out.push('\n');
    let mut models: Vec<&str> = Vec::new();
    for c in &a.cells {
        if !models.contains(&c.model.as_str()) {
            models.push(&c.model);
        }
    }
    for m in models {
        out.push_str(m);
        for &l in &a.lengths {
            match a.cell(m, l) {
                Some(c) => out.push_str(&format!("\t{:.4}±{:.4}", c.mean_auc, c.sd)),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}
