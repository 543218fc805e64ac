//! Compression reports, Pareto fronts and their JSON/CSV forms.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{effective_flops, flops_of_layer};
use crate::error::{Error, Result};
use crate::nn::layer::LayerKind;
use crate::nn::model::Model;
use crate::quant::pack::SCALE_BITS;
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const FLOPS_CONVENTION: &str =
    "2 FLOPs per multiply-accumulate; dense counts every weight, effective counts nonzero weights; information-dropout heads are training-only and excluded";

pub const SIZE_CONVENTION: &str =
    "float stages: 32 bits per nonzero conv/fc weight; quantized stage: packed file bits, sum of (weights * bits + 32) per conv/fc layer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: usize,
    pub nonzero_params: usize,
    pub dense_flops: u64,
    pub effective_flops: u64,
    pub weight_bits: u64,
    /// Pruning action chosen for this layer, if any.
    pub action: Option<f64>,
    pub bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub params: usize,
    pub nonzero_params: usize,
    pub dense_flops: u64,
    pub effective_flops: u64,
    pub model_bits: u64,
    pub layers: Vec<LayerReport>,
}

impl StageReport {
    /// Per-layer figures for `model`; `bits` gives quantized widths of the conv/fc layers.
    pub fn measure<T: Scalar>(stage: &str, model: &Model<T>, val_accuracy: f64, test_accuracy: f64, actions: Option<&[f64]>, bits: Option<&[u32]>) -> Result<Self> {
        let shapes = model.layer_input_shapes()?;
        let mut k = 0;
        let mut layers = Vec::with_capacity(model.layers.len());
        for (l, s) in model.layers.iter().zip(&shapes) {
            let hw = (s[1], s[2]);
            let (action, b) = if l.is_compressible() {
                let r = (actions.and_then(|a| a.get(k).copied()), bits.and_then(|b| b.get(k).copied()));
                k += 1;
                r
            } else {
                (None, None)
            };
            let weight_bits = match (l.is_compressible(), b) {
                (false, _) => 0,
                (true, Some(b)) => l.weight.len() as u64 * b as u64 + SCALE_BITS,
                (true, None) => 32 * l.nonzero_weights() as u64,
            };
            layers.push(LayerReport {
                name: l.name.clone(),
                kind: l.kind,
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                params: l.weight.len() + l.bias.len(),
                nonzero_params: l.nonzero_weights() + l.bias.iter().filter(|v| **v != T::zero()).count(),
                dense_flops: flops_of_layer(l, hw),
                effective_flops: effective_flops(l, hw),
                weight_bits,
                action,
                bits: b,
            });
        }
        let mut r = StageReport {
            stage: stage.to_string(),
            val_accuracy,
            test_accuracy,
            params: 0,
            nonzero_params: 0,
            dense_flops: 0,
            effective_flops: 0,
            model_bits: 0,
            layers,
        };
        r.recompute_totals();
        Ok(r)
    }

    pub fn recompute_totals(&mut self) {
        self.params = self.layers.iter().map(|l| l.params).sum();
        self.nonzero_params = self.layers.iter().map(|l| l.nonzero_params).sum();
        self.dense_flops = self.layers.iter().map(|l| l.dense_flops).sum();
        self.effective_flops = self.layers.iter().map(|l| l.effective_flops).sum();
        self.model_bits = self.layers.iter().map(|l| l.weight_bits).sum();
    }

    pub fn totals_consistent(&self) -> bool {
        let mut c = self.clone();
        c.recompute_totals();
        c == *self
    }
}

/// Summary of one agent episode's end state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub episode_return: f64,
    pub rewards: Vec<f64>,
    pub actions: Vec<f64>,
    pub bits: Vec<u32>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub nonzero_params: usize,
    pub model_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub bits: u64,
    pub accuracy: f64,
}

/// Points not dominated under (smaller size, higher accuracy), sorted by size.
/// Exact duplicates of a front point are kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.bits.cmp(&b.bits).then(b.accuracy.total_cmp(&a.accuracy)));
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        match front.last() {
            Some(last) if p.accuracy < last.accuracy => {}
            Some(last) if p.accuracy == last.accuracy && p.bits != last.bits => {}
            _ => front.push(p),
        }
    }
    front
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub eval_batch: usize,
    pub reward_split: String,
    pub report_split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub schema_version: u32,
    pub model: String,
    pub seed: u64,
    pub flops_convention: String,
    pub size_convention: String,
    pub data: Option<DataSummary>,
    pub stages: Vec<StageReport>,
    pub prune_episodes: Vec<EpisodeSummary>,
    pub quant_episodes: Vec<EpisodeSummary>,
    pub selected_prune_episode: Option<usize>,
    pub selected_quant_episode: Option<usize>,
    pub pareto_front: Vec<ParetoPoint>,
    pub warnings: Vec<String>,
    pub failure: Option<StageFailure>,
}

impl CompressionReport {
    pub fn new(model: &str, seed: u64) -> Self {
        CompressionReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.to_string(),
            seed,
            flops_convention: FLOPS_CONVENTION.to_string(),
            size_convention: SIZE_CONVENTION.to_string(),
            data: None,
            stages: Vec::new(),
            prune_episodes: Vec::new(),
            quant_episodes: Vec::new(),
            selected_prune_episode: None,
            selected_quant_episode: None,
            pareto_front: Vec::new(),
            warnings: Vec::new(),
            failure: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }

    /// Candidate models: every stage and every episode end state.
    pub fn pareto_candidates(&self) -> Vec<ParetoPoint> {
        let stages = self.stages.iter().map(|s| ParetoPoint { bits: s.model_bits, accuracy: s.test_accuracy });
        let eps = self
            .prune_episodes
            .iter()
            .chain(&self.quant_episodes)
            .map(|e| ParetoPoint { bits: e.model_bits, accuracy: e.test_accuracy });
        stages.chain(eps).collect()
    }

    pub fn refresh_front(&mut self) {
        let c = self.pareto_candidates();
        self.pareto_front = if c.is_empty() { Vec::new() } else { pareto_front(&c) };
    }
}

pub const LAYER_COLUMNS: [&str; 14] = [
    "stage", "layer", "name", "kind", "in_channels", "out_channels", "params", "nonzero_params", "dense_flops", "effective_flops", "weight_bits", "action", "bits", "test_accuracy",
];

/// One row of `layers.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub stage: String,
    pub layer: usize,
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: usize,
    pub nonzero_params: usize,
    pub dense_flops: u64,
    pub effective_flops: u64,
    pub weight_bits: u64,
    pub action: Option<f64>,
    pub bits: Option<u32>,
    pub test_accuracy: f64,
}

pub const EPISODE_COLUMNS: [&str; 10] = [
    "stage", "episode", "episode_return", "val_accuracy", "test_accuracy", "nonzero_params", "model_bits", "actions", "bits", "rewards",
];

/// One row of `episodes.csv`; list fields are `;`-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub stage: String,
    pub episode: usize,
    pub episode_return: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub nonzero_params: usize,
    pub model_bits: u64,
    pub actions: String,
    pub bits: String,
    pub rewards: String,
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split<V: std::str::FromStr>(s: &str) -> Result<Vec<V>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|p| p.parse().map_err(|_| Error::Data(format!("bad list entry {p:?}")))).collect()
}

impl EpisodeRow {
    pub fn from_summary(stage: &str, e: &EpisodeSummary) -> Self {
        EpisodeRow {
            stage: stage.to_string(),
            episode: e.episode,
            episode_return: e.episode_return,
            val_accuracy: e.val_accuracy,
            test_accuracy: e.test_accuracy,
            nonzero_params: e.nonzero_params,
            model_bits: e.model_bits,
            actions: join(&e.actions),
            bits: join(&e.bits),
            rewards: join(&e.rewards),
        }
    }

    pub fn to_summary(&self) -> Result<EpisodeSummary> {
        Ok(EpisodeSummary {
            episode: self.episode,
            episode_return: self.episode_return,
            rewards: split(&self.rewards)?,
            actions: split(&self.actions)?,
            bits: split(&self.bits)?,
            val_accuracy: self.val_accuracy,
            test_accuracy: self.test_accuracy,
            nonzero_params: self.nonzero_params,
            model_bits: self.model_bits,
        })
    }
}

pub fn layer_rows(report: &CompressionReport) -> Vec<LayerRow> {
    let mut rows = Vec::new();
    for s in &report.stages {
        for (i, l) in s.layers.iter().enumerate() {
            rows.push(LayerRow {
                stage: s.stage.clone(),
                layer: i,
                name: l.name.clone(),
                kind: l.kind,
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                params: l.params,
                nonzero_params: l.nonzero_params,
                dense_flops: l.dense_flops,
                effective_flops: l.effective_flops,
                weight_bits: l.weight_bits,
                action: l.action,
                bits: l.bits,
                test_accuracy: s.test_accuracy,
            });
        }
    }
    rows
}

pub fn episode_rows(report: &CompressionReport) -> Vec<EpisodeRow> {
    let p = report.prune_episodes.iter().map(|e| EpisodeRow::from_summary("prune", e));
    let q = report.quant_episodes.iter().map(|e| EpisodeRow::from_summary("quantize", e));
    p.chain(q).collect()
}

/// Write rows with a header line even when there are no rows.
pub fn write_csv<W: Write, R: Serialize>(w: W, columns: &[&str], rows: &[R]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let err = |e: csv::Error| Error::Data(format!("CSV: {e}"));
    wr.write_record(columns).map_err(err)?;
    for r in rows {
        wr.serialize(r).map_err(err)?;
    }
    wr.flush().map_err(|e| Error::Data(format!("CSV: {e}")))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read, T: serde::de::DeserializeOwned>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Data(format!("CSV: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `report.json`, or `layers.csv` + `episodes.csv` + `pareto.csv`, into `dir`.
pub fn emit_report(report: &CompressionReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    for s in &report.stages {
        if !s.totals_consistent() {
            return Err(Error::invalid(format!("stage {} totals disagree with its layers", s.stage)));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let mut bytes = serde_json::to_vec_pretty(report)?;
            bytes.push(b'\n');
            write_file(&path, &bytes)?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let mut out = Vec::new();
            let mut buf = Vec::new();
            write_csv(&mut buf, &LAYER_COLUMNS, &layer_rows(report))?;
            out.push((dir.join("layers.csv"), std::mem::take(&mut buf)));
            write_csv(&mut buf, &EPISODE_COLUMNS, &episode_rows(report))?;
            out.push((dir.join("episodes.csv"), std::mem::take(&mut buf)));
            write_csv(&mut buf, &["bits", "accuracy"], &report.pareto_front)?;
            out.push((dir.join("pareto.csv"), buf));
            for (p, b) in &out {
                write_file(p, b)?;
            }
            Ok(out.into_iter().map(|(p, _)| p).collect())
        }
    }
}

pub fn load_report(path: &Path) -> Result<CompressionReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
