//! End-to-end runs: preprocess → extract → fuse → segment → train → evaluate,
//! plus the ablation over feature modes and the PSD export.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{
    evaluate, load_checkpoint, predict, save_checkpoint, stratified_split, train, Dataset, EpochMetrics, Metrics,
    ModelParams, Network, NetworkSpec, Param, ShapeStep, TrainConfig,
};
use crate::container::{EegContainer, Target, Trial};
use crate::dsp::{preprocess, FilterSpec, IcaMode, PreprocessConfig, AUTO_REJECT_KURTOSIS};
use crate::error::{Error, Result};
use crate::features::welch::{WelchConfig, WelchEstimator};
use crate::features::{extract_cube, segment_cube, BandTable, FeatureCube, FeatureKind, FrameSpec, SEGMENT_FRAMES};
use crate::fusion::{fuse_cubes, sum_cubes};
use crate::synth::CubePair;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "DE")]
    De,
    #[serde(rename = "PSD")]
    Psd,
    #[serde(rename = "SUM")]
    Sum,
    #[serde(rename = "MCA")]
    Mca,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [FeatureMode::De, FeatureMode::Psd, FeatureMode::Sum, FeatureMode::Mca];

    /// Row label used in ablation tables.
    pub fn method_label(self) -> &'static str {
        match self {
            FeatureMode::De => "DE",
            FeatureMode::Psd => "PSD",
            FeatureMode::Sum => "DE+PSD (baseline)",
            FeatureMode::Mca => "Proposed MCA",
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::De => "DE",
            FeatureMode::Psd => "PSD",
            FeatureMode::Sum => "SUM",
            FeatureMode::Mca => "MCA",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DE" => Ok(FeatureMode::De),
            "PSD" => Ok(FeatureMode::Psd),
            "SUM" | "DE+PSD" => Ok(FeatureMode::Sum),
            "MCA" => Ok(FeatureMode::Mca),
            _ => Err(Error::Config(format!("unknown feature mode {s:?} (DE, PSD, SUM, MCA)"))),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valence" => Ok(Target::Valence),
            "arousal" => Ok(Target::Arousal),
            _ => Err(Error::Config(format!("unknown target {s:?} (valence, arousal)"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Valence => "valence",
            Target::Arousal => "arousal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessToggles {
    pub notch: bool,
    pub bandpass: bool,
    pub ica: bool,
    pub ica_kurtosis_threshold: f64,
    pub target_hz: f64,
}

impl Default for PreprocessToggles {
    fn default() -> Self {
        Self {
            notch: true,
            bandpass: true,
            ica: false,
            ica_kurtosis_threshold: AUTO_REJECT_KURTOSIS,
            target_hz: 128.0,
        }
    }
}

impl PreprocessToggles {
    pub fn to_config(&self, seed: u64) -> PreprocessConfig {
        PreprocessConfig {
            notch: self.notch.then(FilterSpec::mains_notch),
            bandpass: self.bandpass.then(FilterSpec::eeg_bandpass),
            ica: if self.ica {
                IcaMode::Auto {
                    threshold: self.ica_kurtosis_threshold,
                    seed,
                }
            } else {
                IcaMode::Off
            },
            target_hz: self.target_hz,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: Option<PathBuf>,
    pub target: Target,
    pub feature_mode: FeatureMode,
    pub preprocess: PreprocessToggles,
    pub frames: FrameSpec,
    pub segment_frames: usize,
    pub train: TrainConfig,
    /// Standardise each DE and PSD cube before fusion or summation.
    pub zscore_before_fusion: bool,
    pub output: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            input: None,
            target: Target::Valence,
            feature_mode: FeatureMode::Mca,
            preprocess: PreprocessToggles::default(),
            frames: FrameSpec::default(),
            segment_frames: SEGMENT_FRAMES,
            train: TrainConfig::default(),
            zscore_before_fusion: false,
            output: OutputPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.segment_frames == 0 || self.frames.frames_per_trial % self.segment_frames != 0 {
            return Err(Error::Config(format!(
                "{} frames per trial do not split into segments of {}",
                self.frames.frames_per_trial, self.segment_frames
            )));
        }
        if !(self.frames.window_s > 0.0 && self.frames.hop_s > 0.0) {
            return Err(Error::Config("frame window and hop must be positive".into()));
        }
        Ok(())
    }
}

/// DE and PSD cubes of one trial with its ratings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialFeatures {
    pub subject: u32,
    pub trial: u32,
    pub valence: f64,
    pub arousal: f64,
    pub de: FeatureCube,
    pub psd: FeatureCube,
}

impl TrialFeatures {
    pub fn label(&self, target: Target) -> u8 {
        let r = match target {
            Target::Valence => self.valence,
            Target::Arousal => self.arousal,
        };
        (r > crate::container::HIGH_THRESHOLD) as u8
    }
}

/// Wraps pre-built cube pairs, mapping the label to both ratings.
pub fn features_from_pairs(pairs: Vec<CubePair>) -> Vec<TrialFeatures> {
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let r = if p.label == 1 { crate::synth::HIGH_RATING } else { crate::synth::LOW_RATING };
            TrialFeatures {
                subject: 0,
                trial: i as u32,
                valence: r,
                arousal: r,
                de: p.de,
                psd: p.psd,
            }
        })
        .collect()
}

pub fn trial_features(trial: &Trial, cfg: &ExperimentConfig) -> Result<TrialFeatures> {
    let rec = trial.recording()?;
    let pre = preprocess(&rec, &cfg.preprocess.to_config(cfg.train.seed))?;
    let bands = BandTable::default();
    let de = extract_cube(&pre.recording, FeatureKind::De, &bands, &cfg.frames)?;
    let psd = extract_cube(&pre.recording, FeatureKind::Psd, &bands, &cfg.frames)?;
    Ok(TrialFeatures {
        subject: trial.subject,
        trial: trial.trial,
        valence: trial.valence,
        arousal: trial.arousal,
        de,
        psd,
    })
}

/// Preprocesses and extracts every trial concurrently, preserving order.
pub fn extract_features(container: &EegContainer, cfg: &ExperimentConfig) -> Result<Vec<TrialFeatures>> {
    cfg.validate()?;
    if container.trials.is_empty() {
        return Err(Error::EmptyDataset);
    }
    container.trials.par_iter().map(|t| trial_features(t, cfg)).collect()
}

/// The cube fed to segmentation for one feature mode.
pub fn combine(mode: FeatureMode, de: &FeatureCube, psd: &FeatureCube, zscore: bool) -> Result<FeatureCube> {
    let (de, psd) = if zscore {
        (de.zscored(), psd.zscored())
    } else {
        (de.clone(), psd.clone())
    };
    match mode {
        FeatureMode::De => Ok(de),
        FeatureMode::Psd => Ok(psd),
        FeatureMode::Sum => sum_cubes(&de, &psd),
        FeatureMode::Mca => fuse_cubes(&de, &psd),
    }
}

/// Segments of every trial, labelled by the trial's rating.
pub fn build_dataset(features: &[TrialFeatures], cfg: &ExperimentConfig) -> Result<Dataset> {
    let per_trial = features
        .par_iter()
        .map(|f| {
            let cube = combine(cfg.feature_mode, &f.de, &f.psd, cfg.zscore_before_fusion)?;
            Ok((segment_cube(&cube, cfg.segment_frames)?, f.label(cfg.target)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (segs, label) in per_trial {
        labels.extend(std::iter::repeat(label).take(segs.len()));
        inputs.extend(segs);
    }
    Dataset::new(inputs, labels)
}

/// Per-position input standardisation fitted on training segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Tensor,
    pub std: Tensor,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let first = data.inputs.first().ok_or(Error::EmptyDataset)?;
        let n = data.len() as f64;
        let mut mean = Tensor::zeros_like(first);
        for x in &data.inputs {
            for (m, v) in mean.data_mut().iter_mut().zip(x.data()) {
                *m += v;
            }
        }
        let mean = mean.scale(1.0 / n);
        let mut var = Tensor::zeros_like(first);
        for x in &data.inputs {
            for ((s, v), m) in var.data_mut().iter_mut().zip(x.data()).zip(mean.data()) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.mean.shape() {
            return Err(Error::shape("standardizer", x.shape(), self.mean.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.std.data())
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Tensor::new(x.shape(), data)
    }

    pub fn apply_all(&self, data: &Dataset) -> Result<Dataset> {
        let inputs = data.inputs.par_iter().map(|x| self.apply(x)).collect::<Result<Vec<_>>>()?;
        Dataset::new(inputs, data.labels.clone())
    }
}

/// A trained network with the input standardisation it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub network: Network,
    pub standardizer: Standardizer,
}

const INPUT_MEAN: &str = "input.mean";
const INPUT_STD: &str = "input.std";

impl Classifier {
    pub fn predict(&self, segment: &Tensor) -> Result<u8> {
        self.network.predict(&self.standardizer.apply(segment)?)
    }

    /// Network parameters followed by the standardisation tensors.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = self.network.params.clone();
        for (name, t) in [(INPUT_MEAN, &self.standardizer.mean), (INPUT_STD, &self.standardizer.std)] {
            params.tensors.push(Param {
                name: name.into(),
                value: t.clone(),
                grad: Tensor::zeros_like(t),
            });
        }
        save_checkpoint(&params, path)
    }

    pub fn load(path: &Path, spec: NetworkSpec) -> Result<Self> {
        let mut params = load_checkpoint(path)?;
        let take = |params: &mut ModelParams, name: &str| -> Result<Tensor> {
            let pos = params
                .tensors
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            Ok(params.tensors.remove(pos).value)
        };
        let std = take(&mut params, INPUT_STD)?;
        let mean = take(&mut params, INPUT_MEAN)?;
        Ok(Self {
            network: Network::with_params(spec, params)?,
            standardizer: Standardizer { mean, std },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentCounts {
    pub total: usize,
    pub train: usize,
    pub test: usize,
    /// `[low, high]` over all segments.
    pub per_class: [usize; 2],
}

/// Deterministic run summary. Wall-clock timings are kept out of it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub target: Target,
    pub feature_mode: FeatureMode,
    pub seed: u64,
    pub trials: usize,
    pub segments: SegmentCounts,
    pub split_hash: String,
    pub shape_chain: Vec<ShapeStep>,
    pub parameters: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochMetrics>,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub classifier: Classifier,
    /// Mean wall-clock inference time per test segment.
    pub seconds_per_segment: f64,
}

/// Trains and evaluates one feature mode on already extracted trials.
pub fn run_features(features: &[TrialFeatures], cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let data = build_dataset(features, cfg)?;
    if data.class_counts().contains(&0) {
        return Err(Error::SingleClass);
    }
    let split = stratified_split(&data.labels, cfg.train.train_fraction, cfg.train.seed)?;
    let train_raw = data.subset(&split.train);
    let standardizer = Standardizer::fit(&train_raw)?;
    let train_set = standardizer.apply_all(&train_raw)?;
    let test_set = standardizer.apply_all(&data.subset(&split.test))?;

    let shape = data.inputs[0].shape();
    let spec = NetworkSpec::eeg(shape[0], shape[1], shape[2]);
    let shape_chain = spec.shape_chain()?;
    let trained = train(spec, &train_set, &cfg.train)?;
    let train_metrics = evaluate(&trained.network, &train_set)?;
    let started = Instant::now();
    let test_metrics = if test_set.is_empty() {
        train_metrics
    } else {
        evaluate(&trained.network, &test_set)?
    };
    let seconds_per_segment = started.elapsed().as_secs_f64() / test_set.len().max(1) as f64;

    let report = RunReport {
        target: cfg.target,
        feature_mode: cfg.feature_mode,
        seed: cfg.train.seed,
        trials: features.len(),
        segments: SegmentCounts {
            total: data.len(),
            train: split.train.len(),
            test: split.test.len(),
            per_class: data.class_counts(),
        },
        split_hash: split.fingerprint(),
        shape_chain,
        parameters: trained.network.params.count(),
        epochs_run: trained.history.len(),
        history: trained.history,
        train_metrics,
        test_metrics,
    };
    Ok(RunOutcome {
        report,
        classifier: Classifier {
            network: trained.network,
            standardizer,
        },
        seconds_per_segment,
    })
}

pub fn run(container: &EegContainer, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_features(&extract_features(container, cfg)?, cfg)
}

/// Table-1-style summary of a run, in percent.
pub fn format_run_table(report: &RunReport, seconds_per_segment: Option<f64>) -> String {
    let m = &report.test_metrics;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<6} {:>12} {:>13} {:>10} {:>12}",
        "Target", "Mode", "Accuracy(%)", "Precision(%)", "Recall(%)", "F1-Score(%)"
    );
    let _ = writeln!(
        s,
        "{:<10} {:<6} {:>12.2} {:>13.2} {:>10.2} {:>12.2}",
        report.target.to_string(),
        report.feature_mode.to_string(),
        100.0 * m.accuracy,
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1
    );
    let c = &m.confusion;
    let _ = writeln!(
        s,
        "confusion: TP={} FP={} FN={} TN={}  segments: train={} test={}  epochs={}",
        c.tp, c.fp, c.fn_, c.tn, report.segments.train, report.segments.test, report.epochs_run
    );
    if let Some(t) = seconds_per_segment {
        let _ = writeln!(s, "inference: {:.3} ms per segment", 1e3 * t);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: FeatureMode,
    pub method: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McaComparison {
    pub mca_mean: f64,
    pub sum_mean: f64,
    /// MCA ≥ SUM for each seed.
    pub per_seed: Vec<bool>,
    pub mca_at_least_sum: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub target: Target,
    pub seeds: Vec<u64>,
    /// One split fingerprint per seed, shared by every mode.
    pub split_hashes: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub mca_vs_sum: Option<McaComparison>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs every mode for every seed on the same extracted features. Fails if
/// two modes disagree on a seed's split.
pub fn ablate(features: &[TrialFeatures], cfg: &ExperimentConfig, modes: &[FeatureMode], seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if modes.is_empty() {
        return Err(Error::Config("ablation needs at least one feature mode".into()));
    }
    let mut split_hashes: Vec<Option<String>> = vec![None; seeds.len()];
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for (i, &seed) in seeds.iter().enumerate() {
            let mut c = cfg.clone();
            c.feature_mode = mode;
            c.train.seed = seed;
            let out = run_features(features, &c)?;
            match &split_hashes[i] {
                Some(h) if h != &out.report.split_hash => {
                    return Err(Error::Config(format!(
                        "split for seed {seed} differs between modes ({h} vs {})",
                        out.report.split_hash
                    )))
                }
                Some(_) => {}
                None => split_hashes[i] = Some(out.report.split_hash.clone()),
            }
            accuracies.push(out.report.test_metrics.accuracy);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(AblationRow {
            mode,
            method: mode.method_label().into(),
            accuracies,
            mean,
            std,
        });
    }
    let find = |m| rows.iter().find(|r| r.mode == m);
    let mca_vs_sum = match (find(FeatureMode::Mca), find(FeatureMode::Sum)) {
        (Some(mca), Some(sum)) => {
            let per_seed: Vec<bool> = mca.accuracies.iter().zip(&sum.accuracies).map(|(a, b)| a >= b).collect();
            Some(McaComparison {
                mca_mean: mca.mean,
                sum_mean: sum.mean,
                mca_at_least_sum: per_seed.iter().all(|&b| b),
                per_seed,
            })
        }
        _ => None,
    };
    Ok(AblationReport {
        target: cfg.target,
        seeds: seeds.to_vec(),
        split_hashes: split_hashes.into_iter().map(|h| h.expect("every seed ran")).collect(),
        rows,
        mca_vs_sum,
    })
}

pub fn format_ablation_table(report: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Ablation ({}), seeds {:?}", report.target, report.seeds);
    let _ = writeln!(s, "{:<20} {:>22}", "Method", "Accuracy(%) mean ± std");
    for row in &report.rows {
        let flag = match (&report.mca_vs_sum, row.mode) {
            (Some(c), FeatureMode::Mca) if c.mca_at_least_sum => "  [≥ baseline on every seed]",
            (Some(_), FeatureMode::Mca) => "  [below baseline on some seed]",
            _ => "",
        };
        let _ = writeln!(
            s,
            "{:<20} {:>13.2} ± {:<6.2}{}",
            row.method,
            100.0 * row.mean,
            100.0 * row.std,
            flag
        );
    }
    let _ = writeln!(s, "split hashes: {}", report.split_hashes.join(", "));
    s
}

/// Welch PSD of one preprocessed trial on the 0.5 Hz grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdTable {
    pub frequencies_hz: Vec<f64>,
    /// `[channel][row]`
    pub channels: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

pub const PSD_EXPORT_RANGE_HZ: (f64, f64) = (4.0, 45.0);

pub fn psd_table(trial: &Trial, toggles: &PreprocessToggles, seed: u64) -> Result<PsdTable> {
    let pre = preprocess(&trial.recording()?, &toggles.to_config(seed))?;
    let rec = pre.recording;
    let fs = rec.sample_rate_hz;
    let seg = (2.0 * fs).round() as usize;
    let estimator = WelchEstimator::new(WelchConfig::half_overlap(seg))?;
    let spectra = (0..rec.channels())
        .into_par_iter()
        .map(|c| estimator.estimate(rec.channel(c), fs))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = PSD_EXPORT_RANGE_HZ;
    let tol = 1e-9;
    let bins: Vec<usize> = (0..spectra[0].values.len())
        .filter(|&k| {
            let f = spectra[0].frequency(k);
            f >= lo - tol && f <= hi + tol
        })
        .collect();
    let frequencies_hz = bins.iter().map(|&k| spectra[0].frequency(k)).collect();
    let channels: Vec<Vec<f64>> = spectra
        .iter()
        .map(|s| bins.iter().map(|&k| s.values[k]).collect())
        .collect();
    let mean = (0..bins.len())
        .map(|r| channels.iter().map(|c| c[r]).sum::<f64>() / channels.len() as f64)
        .collect();
    Ok(PsdTable {
        frequencies_hz,
        channels,
        mean,
    })
}

impl PsdTable {
    /// CSV with full round-trip precision: `frequency_hz,ch01,…,mean`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frequency_hz");
        for c in 0..self.channels.len() {
            let _ = write!(s, ",ch{:02}", c + 1);
        }
        s.push_str(",mean\n");
        for (r, f) in self.frequencies_hz.iter().enumerate() {
            let _ = write!(s, "{f}");
            for c in &self.channels {
                let _ = write!(s, ",{}", c[r]);
            }
            let _ = writeln!(s, ",{}", self.mean[r]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
        let cols = header.split(',').count();
        if cols < 3 || !header.starts_with("frequency_hz,") || !header.ends_with(",mean") {
            return Err(Error::Format("unexpected PSD CSV header".into()));
        }
        let n_ch = cols - 2;
        let mut t = PsdTable {
            frequencies_hz: Vec::new(),
            channels: vec![Vec::new(); n_ch],
            mean: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            if vals.len() != cols {
                return Err(Error::Format(format!("row {} has {} columns, expected {cols}", i + 1, vals.len())));
            }
            t.frequencies_hz.push(vals[0]);
            for c in 0..n_ch {
                t.channels[c].push(vals[1 + c]);
            }
            t.mean.push(vals[cols - 1]);
        }
        Ok(t)
    }
}

/// Predictions for every segment of `data` after standardisation.
pub fn classify(classifier: &Classifier, data: &Dataset) -> Result<Vec<u8>> {
    predict(&classifier.network, &classifier.standardizer.apply_all(data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{complementary_cubes, tone_trial, ComplementaryConfig};

    #[test]
    fn mode_and_target_parsing() {
        assert_eq!("mca".parse::<FeatureMode>().unwrap(), FeatureMode::Mca);
        assert_eq!("DE+PSD".parse::<FeatureMode>().unwrap(), FeatureMode::Sum);
        assert!("xyz".parse::<FeatureMode>().is_err());
        assert_eq!("Arousal".parse::<Target>().unwrap(), Target::Arousal);
        assert_eq!(serde_json::to_string(&FeatureMode::Psd).unwrap(), "\"PSD\"");
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = ExperimentConfig {
            segment_frames: 7,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn standardizer_centres_training_data() {
        let xs: Vec<Tensor> = (0..4).map(|i| Tensor::filled(&[2, 1, 1], i as f64)).collect();
        let data = Dataset::new(xs, vec![0, 1, 0, 1]).unwrap();
        let s = Standardizer::fit(&data).unwrap();
        let z = s.apply_all(&data).unwrap();
        let total: f64 = z.inputs.iter().map(|t| t.sum()).sum();
        assert!(total.abs() < 1e-12);
        let constant = Dataset::new(vec![Tensor::filled(&[1, 1, 1], 3.0); 2], vec![0, 1]).unwrap();
        assert_eq!(Standardizer::fit(&constant).unwrap().std.data(), &[1.0]);
    }

    #[test]
    fn sum_mode_cancels_planted_shift() {
        let feats = features_from_pairs(
            complementary_cubes(&ComplementaryConfig {
                trials_per_class: 2,
                ..ComplementaryConfig::default()
            })
            .unwrap(),
        );
        let cfg = ExperimentConfig {
            feature_mode: FeatureMode::Sum,
            ..ExperimentConfig::default()
        };
        let data = build_dataset(&feats, &cfg).unwrap();
        assert_eq!(data.len(), 4 * 20);
        assert_eq!(data.inputs[0].shape(), &[32, 5, 3]);
        assert_eq!(data.class_counts(), [40, 40]);
    }

    #[test]
    fn psd_export_grid_and_tone() {
        let trial = tone_trial(16.0, 3, 128.0, 60.0, 1).unwrap();
        let table = psd_table(&trial, &PreprocessToggles::default(), 0).unwrap();
        assert_eq!(table.frequencies_hz.len(), 83);
        assert_eq!(table.frequencies_hz[0], 4.0);
        assert_eq!(*table.frequencies_hz.last().unwrap(), 45.0);
        let peak = (0..83).max_by(|&a, &b| table.mean[a].total_cmp(&table.mean[b])).unwrap();
        assert_eq!(table.frequencies_hz[peak], 16.0);
        let back = PsdTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn ablation_requires_seeds() {
        assert!(ablate(&[], &ExperimentConfig::default(), &FeatureMode::ALL, &[]).is_err());
    }
}
