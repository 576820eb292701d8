//! Error metrics and the hyperparameter sweep harness.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::readout::{fit, ReadoutModel, RegressionMethod};
use crate::reservoir::{Activation, InitMethod, Lanes, Reservoir, ReservoirConfig, LANES};
use crate::rng::derive_seed;

/// Samples with |actual| below this fraction of the largest |actual| are
/// left out of the MAPE.
pub const DEFAULT_EPSILON_REL: f64 = 1e-9;

pub const DEFAULT_REPEATS: usize = 5;

pub const SWEEP_CSV_HEADER: &str = "axis,value,dataset,repeat,mape_percent,mse,train_seconds,seed";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mape_percent: f64,
    pub mse: f64,
    pub samples_used: u64,
    pub samples_excluded: u64,
    pub wall_time_seconds: f64,
}

impl MetricReport {
    pub fn with_wall_time(mut self, seconds: f64) -> Self {
        self.wall_time_seconds = seconds;
        self
    }

    pub fn total_samples(&self) -> u64 {
        self.samples_used + self.samples_excluded
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MAPE {:.4}%  MSE {:.6e}  samples {} used / {} excluded  train {:.3}s",
            self.mape_percent, self.mse, self.samples_used, self.samples_excluded, self.wall_time_seconds
        )
    }
}

#[derive(Default)]
struct MetricSums {
    ape: f64,
    se: f64,
    used: u64,
    excluded: u64,
}

impl MetricSums {
    fn add(&mut self, actual: &[f64], predicted: &[f64], epsilon: f64) {
        for (&a, &f) in actual.iter().zip(predicted) {
            let e = a - f;
            self.se += e * e;
            if a.abs() < epsilon {
                self.excluded += 1;
            } else {
                self.ape += (e / a).abs();
                self.used += 1;
            }
        }
    }

    fn finish(self, epsilon: f64) -> Result<MetricReport> {
        if self.used == 0 {
            return Err(Error::DegenerateMetric { epsilon });
        }
        let total = (self.used + self.excluded) as f64;
        Ok(MetricReport {
            mape_percent: 100.0 * self.ape / self.used as f64,
            mse: self.se / total,
            samples_used: self.used,
            samples_excluded: self.excluded,
            wall_time_seconds: 0.0,
        })
    }
}

/// Mean absolute percentage error, skipping (and counting) samples whose
/// actual value is below `epsilon` in magnitude. MSE covers every sample.
pub fn mape(actual: &Matrix, predicted: &Matrix, epsilon: f64) -> Result<MetricReport> {
    if actual.shape() != predicted.shape() {
        return Err(Error::shape("mape", actual.shape_str(), predicted.shape_str()));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut sums = MetricSums::default();
    sums.add(actual.as_slice(), predicted.as_slice(), epsilon);
    sums.finish(epsilon)
}

fn epsilon_for(dataset: &SequenceDataset, washout: usize) -> f64 {
    let max = dataset
        .targets()
        .iter()
        .map(|y| y.columns(washout, y.cols()).max_abs())
        .fold(0.0, f64::max);
    (DEFAULT_EPSILON_REL * max).max(f64::MIN_POSITIVE)
}

/// Scores an arbitrary predictor. `predict` maps one K × T input sequence to
/// an L × T prediction; the first `washout` columns are ignored.
pub fn evaluate_predictor(
    dataset: &SequenceDataset,
    washout: usize,
    predict: impl Fn(&Matrix) -> Result<Matrix>,
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let epsilon = epsilon_for(dataset, washout);
    let mut sums = MetricSums::default();
    for (u, y) in dataset.inputs().iter().zip(dataset.targets()) {
        let p = predict(u)?;
        if p.shape() != y.shape() {
            return Err(Error::shape(
                "evaluate",
                format!("prediction {}", p.shape_str()),
                format!("target {}", y.shape_str()),
            ));
        }
        let (a, f) = (y.columns(washout, y.cols()), p.columns(washout, p.cols()));
        sums.add(a.as_slice(), f.as_slice(), epsilon);
    }
    sums.finish(epsilon)
}

/// Reference predictors that involve no training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Always predicts zero: MAPE is exactly 100%.
    Zero,
    /// Predicts the received signal equals the transmitted one.
    Passthrough,
}

pub fn evaluate_baseline(dataset: &SequenceDataset, baseline: Baseline, washout: usize) -> Result<MetricReport> {
    match baseline {
        Baseline::Zero => evaluate_predictor(dataset, washout, |u| Ok(Matrix::zeros(dataset.output_dim(), u.cols()))),
        Baseline::Passthrough => {
            if dataset.input_dim() != dataset.output_dim() {
                return Err(Error::shape(
                    "passthrough baseline",
                    format!("K={}", dataset.input_dim()),
                    format!("L={}", dataset.output_dim()),
                ));
            }
            evaluate_predictor(dataset, washout, |u| Ok(u.clone()))
        }
    }
}

/// Free-running predictions for a feedback reservoir: y(t-1) fed back is the
/// model's own previous output.
fn predict_free_run(reservoir: &Reservoir, model: &ReadoutModel, group: &[&Matrix]) -> Result<Vec<Matrix>> {
    let l = reservoir.output_dim();
    let n = reservoir.size();
    let washout = reservoir.config().washout;
    let w_out = model.w_out();
    if let Some(u) = group.iter().find(|u| u.cols() <= washout) {
        return Err(Error::EmptyTrajectory { len: u.cols(), washout });
    }
    let t_len = group.iter().map(|u| u.cols()).max().unwrap_or(0);
    let mut lanes = Lanes::new(reservoir, None);
    let mut out: Vec<Matrix> = group.iter().map(|u| Matrix::zeros(l, u.cols() - washout)).collect();
    let mut prev = vec![vec![0.0; l]; group.len()];
    for t in 1..=t_len {
        for (b, u) in group.iter().enumerate() {
            if t <= u.cols() {
                lanes.set_input(b, u, t - 1);
                lanes.set_feedback(b, prev[b].iter().copied());
            }
        }
        lanes.step()?;
        for (b, u) in group.iter().enumerate() {
            if t > u.cols() {
                continue;
            }
            for (r, p) in prev[b].iter_mut().enumerate() {
                let w = w_out.row(r);
                let mut acc = 0.0;
                for (i, wi) in w.iter().enumerate().take(n) {
                    acc += wi * lanes.state(b, i);
                }
                *p = acc;
            }
            if t > washout {
                for (r, p) in prev[b].iter().enumerate() {
                    out[b].set(r, t - washout - 1, *p);
                }
            }
        }
    }
    Ok(out)
}

/// Runs the trained ESN over every test sequence and aggregates one report.
/// Teacher forcing is off: a feedback reservoir sees its own predictions.
pub fn evaluate(reservoir: &Reservoir, model: &ReadoutModel, dataset: &SequenceDataset) -> Result<MetricReport> {
    if dataset.input_dim() != reservoir.input_dim() || dataset.output_dim() != reservoir.output_dim() {
        return Err(Error::shape(
            "evaluate",
            format!("dataset K={} L={}", dataset.input_dim(), dataset.output_dim()),
            format!("reservoir K={} L={}", reservoir.input_dim(), reservoir.output_dim()),
        ));
    }
    if model.w_out().shape() != (reservoir.output_dim(), reservoir.size()) {
        return Err(Error::shape(
            "evaluate",
            format!("w_out {}", model.w_out().shape_str()),
            format!("{}x{}", reservoir.output_dim(), reservoir.size()),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let washout = reservoir.config().washout;
    let epsilon = epsilon_for(dataset, washout);
    let chunk = LANES * rayon::current_num_threads().max(1);
    let mut sums = MetricSums::default();
    for start in (0..dataset.len()).step_by(chunk) {
        let end = (start + chunk).min(dataset.len());
        let inputs: Vec<&Matrix> = dataset.inputs()[start..end].iter().collect();
        let preds: Vec<Matrix> = if reservoir.config().use_feedback {
            inputs
                .par_chunks(LANES)
                .map(|g| predict_free_run(reservoir, model, g))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect()
        } else {
            let drives: Vec<(&Matrix, Option<&Matrix>)> = inputs.iter().map(|u| (*u, None)).collect();
            reservoir
                .harvest_many(&drives)?
                .iter()
                .map(|traj| model.predict(traj))
                .collect::<Result<_>>()?
        };
        for (p, y) in preds.iter().zip(&dataset.targets()[start..end]) {
            let a = y.columns(washout, y.cols());
            sums.add(a.as_slice(), p.as_slice(), epsilon);
        }
    }
    sums.finish(epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    InitMethod,
    SpectralRadius,
    ReservoirSize,
    Activation,
    RegressionMethod,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::InitMethod => "init",
            SweepAxis::SpectralRadius => "radius",
            SweepAxis::ReservoirSize => "size",
            SweepAxis::Activation => "activation",
            SweepAxis::RegressionMethod => "regression",
        }
    }

    /// The value grid each experiment used: ρ from 0.1 to 0.9 in steps of
    /// 0.1, N over {50 … 2400}, and every initializer/activation/regression.
    pub fn default_values(self) -> Vec<SweepValue> {
        match self {
            SweepAxis::InitMethod => InitMethod::ALL.iter().map(|&m| SweepValue::Init(m)).collect(),
            SweepAxis::SpectralRadius => (1..=9).map(|i| SweepValue::Radius(i as f64 / 10.0)).collect(),
            SweepAxis::ReservoirSize => [50, 100, 150, 300, 578, 600, 1200, 2400]
                .into_iter()
                .map(SweepValue::Size)
                .collect(),
            SweepAxis::Activation => Activation::ALL.iter().map(|&a| SweepValue::Activation(a)).collect(),
            SweepAxis::RegressionMethod => vec![
                SweepValue::Regression(RegressionMethod::default()),
                SweepValue::Regression(RegressionMethod::Linear),
                SweepValue::Regression(RegressionMethod::lasso(1e-3)),
            ],
        }
    }

    pub fn parse_value(self, s: &str) -> Result<SweepValue> {
        let bad = |e: String| Error::Config(format!("bad {} value '{s}': {e}", self.name()));
        Ok(match self {
            SweepAxis::InitMethod => SweepValue::Init(s.parse()?),
            SweepAxis::SpectralRadius => {
                SweepValue::Radius(s.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?)
            }
            SweepAxis::ReservoirSize => {
                SweepValue::Size(s.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?)
            }
            SweepAxis::Activation => SweepValue::Activation(s.parse()?),
            SweepAxis::RegressionMethod => SweepValue::Regression(match s {
                "ridge" => RegressionMethod::default(),
                "linear" => RegressionMethod::Linear,
                "lasso" => RegressionMethod::lasso(1e-3),
                _ => return Err(bad("expected ridge, linear or lasso".into())),
            }),
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(SweepAxis::InitMethod),
            "radius" => Ok(SweepAxis::SpectralRadius),
            "size" => Ok(SweepAxis::ReservoirSize),
            "activation" => Ok(SweepAxis::Activation),
            "regression" => Ok(SweepAxis::RegressionMethod),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected init, radius, size, activation or regression)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Init(InitMethod),
    Radius(f64),
    Size(usize),
    Activation(Activation),
    Regression(RegressionMethod),
}

impl SweepValue {
    pub fn axis(&self) -> SweepAxis {
        match self {
            SweepValue::Init(_) => SweepAxis::InitMethod,
            SweepValue::Radius(_) => SweepAxis::SpectralRadius,
            SweepValue::Size(_) => SweepAxis::ReservoirSize,
            SweepValue::Activation(_) => SweepAxis::Activation,
            SweepValue::Regression(_) => SweepAxis::RegressionMethod,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SweepValue::Init(m) => m.to_string(),
            SweepValue::Radius(r) => r.to_string(),
            SweepValue::Size(n) => n.to_string(),
            SweepValue::Activation(a) => a.to_string(),
            SweepValue::Regression(m) => m.to_string(),
        }
    }

    fn apply(&self, config: &mut ReservoirConfig, method: &mut RegressionMethod) {
        match *self {
            SweepValue::Init(m) => config.init = m,
            SweepValue::Radius(r) => config.spectral_radius = r,
            SweepValue::Size(n) => config.reservoir_size = n,
            SweepValue::Activation(a) => config.activation = a,
            SweepValue::Regression(m) => *method = m,
        }
    }
}

/// A dataset split into training and held-out parts.
#[derive(Debug, Clone)]
pub struct NamedSplit {
    pub name: String,
    pub train: SequenceDataset,
    pub test: SequenceDataset,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    pub base_config: ReservoirConfig,
    pub base_method: RegressionMethod,
    pub datasets: Vec<NamedSplit>,
    pub repeats: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if let Some(v) = self.values.iter().find(|v| v.axis() != self.axis) {
            return Err(Error::Config(format!(
                "value '{}' does not belong to axis '{}'",
                v.label(),
                self.axis.name()
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("sweep needs at least one dataset".into()));
        }
        Ok(())
    }
}

/// Reservoir seed of one sweep repeat. Every value and dataset shares the
/// draw for a given repeat, so differences between cells come from the axis
/// value alone.
pub fn repeat_seed(master_seed: u64, repeat: usize) -> u64 {
    derive_seed(master_seed, repeat as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub value_index: usize,
    pub dataset: String,
    pub repeat: usize,
    pub seed: u64,
    pub train_seconds: f64,
    pub outcome: std::result::Result<MetricReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub value: String,
    pub dataset: String,
    pub mean_mape: f64,
    pub std_mape: f64,
    pub mean_train_seconds: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl SweepReport {
    /// Mean ± sample std of MAPE per (value, dataset), failed repeats excluded.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut out: Vec<SweepSummary> = Vec::new();
        let mut keys: Vec<(usize, &str)> = self.rows.iter().map(|r| (r.value_index, r.dataset.as_str())).collect();
        keys.dedup();
        for (vi, ds) in keys {
            let cell: Vec<&SweepRow> = self
                .rows
                .iter()
                .filter(|r| r.value_index == vi && r.dataset == ds)
                .collect();
            let mapes: Vec<f64> = cell
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.mape_percent))
                .collect();
            let times: Vec<f64> = cell.iter().map(|r| r.train_seconds).collect();
            let (mean_mape, std_mape) = mean_std(&mapes);
            out.push(SweepSummary {
                value: cell[0].value.clone(),
                dataset: ds.to_string(),
                mean_mape,
                std_mape,
                mean_train_seconds: mean_std(&times).0,
                failures: cell.len() - mapes.len(),
            });
        }
        out
    }

    /// One row per cell; failed cells carry `NaN` metrics.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        csv.write_record(SWEEP_CSV_HEADER.split(',')).map_err(io)?;
        for r in &self.rows {
            let (mape, mse) = match &r.outcome {
                Ok(m) => (m.mape_percent.to_string(), m.mse.to_string()),
                Err(_) => ("NaN".to_string(), "NaN".to_string()),
            };
            csv.write_record([
                r.axis.name().to_string(),
                r.value.clone(),
                r.dataset.clone(),
                r.repeat.to_string(),
                mape,
                mse,
                r.train_seconds.to_string(),
                r.seed.to_string(),
            ])
            .map_err(io)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Builds, fits and scores one configuration; returns the report with the
/// fit time filled in.
pub fn fit_and_evaluate(config: ReservoirConfig, method: RegressionMethod, split: &NamedSplit) -> Result<MetricReport> {
    let reservoir = Reservoir::build(config)?;
    let start = Instant::now();
    let model = fit(&reservoir, &split.train, method)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(evaluate(&reservoir, &model, &split.test)?.with_wall_time(seconds))
}

/// Runs every value × dataset × repeat cell. A failing cell becomes an error
/// row; only an invalid spec aborts the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let mut cells = Vec::new();
    for (vi, value) in spec.values.iter().enumerate() {
        for (di, _) in spec.datasets.iter().enumerate() {
            for repeat in 0..spec.repeats {
                cells.push((vi, *value, di, repeat));
            }
        }
    }
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(vi, value, di, repeat)| {
            let split = &spec.datasets[di];
            let mut config = spec.base_config.clone();
            let mut method = spec.base_method;
            value.apply(&mut config, &mut method);
            let seed = repeat_seed(spec.master_seed, repeat);
            config.seed = seed;
            let outcome = fit_and_evaluate(config, method, split).map_err(|e| e.to_string());
            SweepRow {
                axis: spec.axis,
                value: value.label(),
                value_index: vi,
                dataset: split.name.clone(),
                repeat,
                seed,
                train_seconds: outcome.as_ref().map_or(f64::NAN, |m| m.wall_time_seconds),
                outcome,
            }
        })
        .collect();
    Ok(SweepReport { axis: spec.axis, rows })
}
