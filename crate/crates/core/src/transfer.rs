//! Pretrain on a source domain, then evaluate directly or re-solve the
//! readout on target data. The reservoir itself is never modified.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::readout::{accumulate_dataset, Accumulators, ReadoutModel, RegressionMethod, DEFAULT_BATCH};
use crate::reservoir::{Reservoir, ReservoirConfig};

pub const TRANSFER_CSV_HEADER: &str = "mode,alpha,source,target,mape_percent,mse,train_seconds,seed";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferMode {
    DirectTransfer,
    /// Re-solve on `alpha · source + (1 - alpha) · target` accumulators.
    /// `alpha = 0` is plain retraining on the target.
    FineTune {
        alpha: f64,
    },
}

impl TransferMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransferMode::FineTune { alpha } if !(0.0..=1.0).contains(&alpha) => Err(Error::invalid(format!(
                "blend weight alpha must be in [0, 1], got {alpha}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransferMode::DirectTransfer => "direct",
            TransferMode::FineTune { .. } => "finetune",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            TransferMode::DirectTransfer => None,
            TransferMode::FineTune { alpha } => Some(alpha),
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha() {
            None => f.write_str(self.name()),
            Some(a) => write!(f, "{}(alpha={a})", self.name()),
        }
    }
}

fn check_compatible(what: &str, reservoir: &Reservoir, ds: &SequenceDataset) -> Result<()> {
    if ds.input_dim() != reservoir.input_dim() || ds.output_dim() != reservoir.output_dim() {
        return Err(Error::shape(
            "transfer",
            format!("{what} K={} L={}", ds.input_dim(), ds.output_dim()),
            format!("reservoir K={} L={}", reservoir.input_dim(), reservoir.output_dim()),
        ));
    }
    Ok(())
}

/// Fits on the source and keeps the accumulators for later blending.
pub fn pretrain(
    reservoir: &Reservoir,
    source: &SequenceDataset,
    method: RegressionMethod,
) -> Result<(ReadoutModel, Accumulators)> {
    check_compatible("source", reservoir, source)?;
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let acc = accumulate_dataset(reservoir, source, DEFAULT_BATCH)?;
    let model = acc.solve(method)?;
    Ok((model, acc))
}

/// Scores the source-trained model on the target with no retraining.
pub fn direct_transfer_eval(
    reservoir: &Reservoir,
    model: &ReadoutModel,
    target_test: &SequenceDataset,
) -> Result<MetricReport> {
    check_compatible("target test", reservoir, target_test)?;
    evaluate(reservoir, model, target_test)
}

pub fn fine_tune(
    reservoir: &Reservoir,
    source_acc: &Accumulators,
    target_train: &SequenceDataset,
    alpha: f64,
    method: RegressionMethod,
) -> Result<ReadoutModel> {
    TransferMode::FineTune { alpha }.validate()?;
    check_compatible("target train", reservoir, target_train)?;
    if source_acc.reservoir_size() != reservoir.size() || source_acc.output_dim() != reservoir.output_dim() {
        return Err(Error::shape(
            "fine_tune",
            format!(
                "source accumulators N={} L={}",
                source_acc.reservoir_size(),
                source_acc.output_dim()
            ),
            format!("reservoir N={} L={}", reservoir.size(), reservoir.output_dim()),
        ));
    }
    if target_train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let target_acc = accumulate_dataset(reservoir, target_train, DEFAULT_BATCH)?;
    Accumulators::blend(source_acc, &target_acc, alpha)?.solve(method)
}

/// One transfer experiment: datasets plus a mode.
#[derive(Debug, Clone)]
pub struct TransferPlan<'a> {
    pub source_name: String,
    pub target_name: String,
    pub source: &'a SequenceDataset,
    pub target_train: &'a SequenceDataset,
    pub target_test: &'a SequenceDataset,
    pub mode: TransferMode,
}

impl TransferPlan<'_> {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        let dims = |d: &SequenceDataset| (d.input_dim(), d.output_dim());
        let s = dims(self.source);
        for (what, d) in [("target train", self.target_train), ("target test", self.target_test)] {
            if dims(d) != s {
                return Err(Error::shape(
                    "transfer plan",
                    format!("source K={} L={}", s.0, s.1),
                    format!("{what} K={} L={}", d.input_dim(), d.output_dim()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub mode: TransferMode,
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub report: MetricReport,
}

/// Runs a plan with a freshly built reservoir. `train_seconds` covers the
/// source fit plus, when fine-tuning, the target re-solve.
pub fn run_transfer(
    plan: &TransferPlan<'_>,
    config: &ReservoirConfig,
    method: RegressionMethod,
) -> Result<TransferRow> {
    plan.validate()?;
    let reservoir = Reservoir::build(config.clone())?;
    let start = Instant::now();
    let (source_model, source_acc) = pretrain(&reservoir, plan.source, method)?;
    let model = match plan.mode {
        TransferMode::DirectTransfer => source_model,
        TransferMode::FineTune { alpha } => fine_tune(&reservoir, &source_acc, plan.target_train, alpha, method)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    let report = evaluate(&reservoir, &model, plan.target_test)?.with_wall_time(seconds);
    Ok(TransferRow {
        mode: plan.mode,
        source: plan.source_name.clone(),
        target: plan.target_name.clone(),
        seed: config.seed,
        report,
    })
}

pub fn write_transfer_csv<W: Write>(rows: &[TransferRow], w: W) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    csv.write_record(TRANSFER_CSV_HEADER.split(',')).map_err(io)?;
    for r in rows {
        csv.write_record([
            r.mode.name().to_string(),
            r.mode.alpha().map(|a| a.to_string()).unwrap_or_default(),
            r.source.clone(),
            r.target.clone(),
            r.report.mape_percent.to_string(),
            r.report.mse.to_string(),
            r.report.wall_time_seconds.to_string(),
            r.seed.to_string(),
        ])
        .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelsim::{generate_dataset, ChannelSpec, Tap, WaveformSpec};
    use crate::dataset::DatasetMeta;
    use crate::numerics::Matrix;
    use crate::readout::fit;

    fn config() -> ReservoirConfig {
        ReservoirConfig {
            reservoir_size: 40,
            seed: 9,
            ..ReservoirConfig::default()
        }
    }

    fn data(seed: u64, n: usize) -> SequenceDataset {
        let wave = WaveformSpec::new(80, 4, 0.35, 8, seed);
        let chan = ChannelSpec::Multipath {
            taps: vec![
                Tap {
                    delay: 0,
                    gain_i: 1.0,
                    gain_q: 0.0,
                },
                Tap {
                    delay: 2,
                    gain_i: 0.4,
                    gain_q: -0.2,
                },
            ],
            disturbance: 0.0,
            disturbance_period: 100,
            snr_db: 30.0,
        };
        generate_dataset(&wave, &chan, n).unwrap()
    }

    #[test]
    fn pretrain_matches_fit_and_rejects_empty() {
        let r = Reservoir::build(config()).unwrap();
        let src = data(1, 12);
        let (m, acc) = pretrain(&r, &src, RegressionMethod::default()).unwrap();
        assert_eq!(m, fit(&r, &src, RegressionMethod::default()).unwrap());
        assert_eq!(acc.samples_seen(), 12 * 80);
        let empty = SequenceDataset::new(80, 2, 2, vec![], vec![], DatasetMeta::default()).unwrap();
        assert!(pretrain(&r, &empty, RegressionMethod::default()).is_err());
    }

    #[test]
    fn blend_endpoints() {
        let r = Reservoir::build(config()).unwrap();
        let (src, tgt) = (data(1, 10), data(2, 10));
        let (src_model, acc) = pretrain(&r, &src, RegressionMethod::default()).unwrap();
        let m0 = fine_tune(&r, &acc, &tgt, 0.0, RegressionMethod::default()).unwrap();
        let direct = fit(&r, &tgt, RegressionMethod::default()).unwrap();
        assert!(m0.w_out().max_abs_diff(direct.w_out()) < 1e-12);
        let m1 = fine_tune(&r, &acc, &tgt, 1.0, RegressionMethod::default()).unwrap();
        assert!(m1.w_out().max_abs_diff(src_model.w_out()) < 1e-12);
        assert!(fine_tune(&r, &acc, &tgt, 1.5, RegressionMethod::default()).is_err());
    }

    #[test]
    fn half_blend_of_equal_sized_sets_is_pooled_fit() {
        let r = Reservoir::build(config()).unwrap();
        let pooled = data(3, 20);
        let src = pooled.subset(&(0..10).collect::<Vec<_>>());
        let tgt = pooled.subset(&(10..20).collect::<Vec<_>>());
        // Pooled accumulators are the sum; halving both sides of (B + λI)W = A
        // only rescales λ, so compare against a fit with λ doubled.
        let method = RegressionMethod::Ridge { lambda: 1e-6 };
        let (_, acc) = pretrain(&r, &src, method).unwrap();
        let half = fine_tune(&r, &acc, &tgt, 0.5, method).unwrap();
        let oracle = fit(&r, &pooled, RegressionMethod::Ridge { lambda: 2e-6 }).unwrap();
        assert!(half.w_out().max_abs_diff(oracle.w_out()) < 1e-6);
    }

    #[test]
    fn reservoir_untouched_and_plan_checks() {
        let r = Reservoir::build(config()).unwrap();
        let before = (r.w_in().clone(), r.w().clone(), r.w_fb().clone());
        let (src, tgt) = (data(4, 10), data(5, 10));
        let (_, acc) = pretrain(&r, &src, RegressionMethod::default()).unwrap();
        fine_tune(&r, &acc, &tgt, 0.3, RegressionMethod::default()).unwrap();
        assert_eq!(before, (r.w_in().clone(), r.w().clone(), r.w_fb().clone()));

        let odd = SequenceDataset::new(
            80,
            3,
            2,
            vec![Matrix::zeros(3, 80)],
            vec![Matrix::zeros(2, 80)],
            DatasetMeta::default(),
        )
        .unwrap();
        let plan = TransferPlan {
            source_name: "a".into(),
            target_name: "b".into(),
            source: &src,
            target_train: &odd,
            target_test: &tgt,
            mode: TransferMode::DirectTransfer,
        };
        assert!(matches!(plan.validate(), Err(Error::Shape { .. })));
    }

    #[test]
    fn run_and_csv() {
        let (src, tgt_train, tgt_test) = (data(6, 10), data(7, 10), data(8, 4));
        let mut rows = Vec::new();
        for mode in [TransferMode::DirectTransfer, TransferMode::FineTune { alpha: 0.0 }] {
            let plan = TransferPlan {
                source_name: "src".into(),
                target_name: "tgt".into(),
                source: &src,
                target_train: &tgt_train,
                target_test: &tgt_test,
                mode,
            };
            rows.push(run_transfer(&plan, &config(), RegressionMethod::default()).unwrap());
        }
        let r = Reservoir::build(config()).unwrap();
        let (m, _) = pretrain(&r, &src, RegressionMethod::default()).unwrap();
        assert_eq!(
            rows[0].report.mape_percent,
            direct_transfer_eval(&r, &m, &tgt_test).unwrap().mape_percent
        );
        let mut buf = Vec::new();
        write_transfer_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRANSFER_CSV_HEADER);
        assert!(lines[1].starts_with("direct,,src,tgt,"));
        assert!(lines[2].starts_with("finetune,0,src,tgt,"));
    }
}
