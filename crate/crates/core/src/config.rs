//! Run configuration: a strict TOML file (unknown keys are errors).
//!
//! The shipped defaults live in `config/default.toml` and are compiled in.
//! A user file only needs the keys it changes; missing sections and keys take
//! the shipped values, and user `[presets.*]` tables are added to (or
//! replace) the built-in presets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channelsim::{ChannelSpec, Tap, WaveformSpec};
use crate::error::{Error, Result};
use crate::eval::{SweepAxis, SweepValue, DEFAULT_REPEATS};
use crate::readout::{RegressionMethod, DEFAULT_BATCH, DEFAULT_LAMBDA, DEFAULT_LASSO_MAX_ITER, DEFAULT_LASSO_TOL};
use crate::reservoir::{Activation, InitMethod, ReservoirConfig};
use crate::rng::{derive_seed, name_tag, tag};

pub const SHIPPED_CONFIG: &str = include_str!("../config/default.toml");
pub const CONFIG_ENV: &str = "ECHOCHAN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub sequence_length: usize,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub filter_span: usize,
    pub num_sequences: usize,
}

impl Default for WaveformSection {
    fn default() -> Self {
        WaveformSection {
            sequence_length: 578,
            samples_per_symbol: 4,
            rolloff: 0.35,
            filter_span: 8,
            num_sequences: 1000,
        }
    }
}

/// Every [`ReservoirConfig`] field except the seed, which is derived from
/// the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSection {
    pub input_dim: usize,
    pub reservoir_size: usize,
    pub output_dim: usize,
    pub init: InitMethod,
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub activation: Activation,
    pub use_feedback: bool,
    pub washout: usize,
    pub allow_unstable: bool,
}

impl Default for ReservoirSection {
    fn default() -> Self {
        let c = ReservoirConfig::default();
        ReservoirSection {
            input_dim: c.input_dim,
            reservoir_size: c.reservoir_size,
            output_dim: c.output_dim,
            init: c.init,
            sparsity: c.sparsity,
            spectral_radius: c.spectral_radius,
            activation: c.activation,
            use_feedback: c.use_feedback,
            washout: c.washout,
            allow_unstable: c.allow_unstable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Ridge,
    Linear,
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub method: MethodName,
    /// Ridge or lasso penalty; ignored for `linear`.
    pub lambda: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
    pub batch_size: usize,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            method: MethodName::Ridge,
            lambda: DEFAULT_LAMBDA,
            lasso_max_iter: DEFAULT_LASSO_MAX_ITER,
            lasso_tol: DEFAULT_LASSO_TOL,
            batch_size: DEFAULT_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub train_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub repeats: usize,
    pub radius: Vec<f64>,
    pub size: Vec<usize>,
    /// Rescale every initializer to `reservoir.spectral_radius` in the init
    /// sweep. When false the raw initializer radius is kept.
    pub normalize_init: bool,
    pub lasso_lambda: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let radius = SweepAxis::SpectralRadius
            .default_values()
            .into_iter()
            .map(|v| match v {
                SweepValue::Radius(r) => r,
                _ => unreachable!(),
            })
            .collect();
        let size = SweepAxis::ReservoirSize
            .default_values()
            .into_iter()
            .map(|v| match v {
                SweepValue::Size(n) => n,
                _ => unreachable!(),
            })
            .collect();
        SweepSection {
            repeats: DEFAULT_REPEATS,
            radius,
            size,
            normalize_init: true,
            lasso_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub alpha: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection { alpha: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where outputs go when a command is not given an explicit path.
    pub output_dir: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { output_dir: ".".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub waveform: WaveformSection,
    pub reservoir: ReservoirSection,
    pub readout: ReadoutSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub transfer: TransferSection,
    pub paths: PathsSection,
    pub presets: BTreeMap<String, ChannelSpec>,
}

fn tap(delay: usize, gain_i: f64, gain_q: f64) -> Tap {
    Tap { delay, gain_i, gain_q }
}

/// The built-in channel presets.
pub fn builtin_presets() -> BTreeMap<String, ChannelSpec> {
    let four_tap = vec![
        tap(0, 1.0, 0.0),
        tap(1, 0.5, 0.3),
        tap(3, -0.3, 0.2),
        tap(6, 0.15, -0.1),
    ];
    let multipath = |taps: Vec<Tap>, disturbance: f64, snr_db: f64| ChannelSpec::Multipath {
        taps,
        disturbance,
        disturbance_period: 578,
        snr_db,
    };
    BTreeMap::from([
        ("awgn".to_string(), ChannelSpec::Awgn { snr_db: 20.0 }),
        (
            "data1".to_string(),
            multipath(vec![tap(0, 1.0, 0.0), tap(2, 0.45, -0.2)], 0.0, 35.0),
        ),
        ("data2".to_string(), multipath(four_tap.clone(), 0.0, 33.0)),
        ("data3".to_string(), multipath(four_tap.clone(), 0.2, 30.0)),
        ("data4".to_string(), multipath(four_tap, 0.6, 18.0)),
        (
            "bellhop_like".to_string(),
            multipath(
                vec![
                    tap(0, 0.8, 0.1),
                    tap(1, 0.45, -0.35),
                    tap(2, -0.3, 0.25),
                    tap(3, 0.25, 0.2),
                    tap(5, -0.15, -0.2),
                    tap(7, 0.12, -0.05),
                    tap(9, -0.06, 0.1),
                    tap(12, 0.05, 0.04),
                ],
                0.0,
                35.0,
            ),
        ),
    ])
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            waveform: WaveformSection::default(),
            reservoir: ReservoirSection::default(),
            readout: ReadoutSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            transfer: TransferSection::default(),
            paths: PathsSection::default(),
            presets: builtin_presets(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, spec) in builtin_presets() {
            cfg.presets.entry(name).or_insert(spec);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED_CONFIG).expect("shipped config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The file at `path` if given, else the shipped defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::shipped()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.waveform_spec(0).validate().map_err(cfg)?;
        self.reservoir_config().validate().map_err(cfg)?;
        self.regression_method().validate().map_err(cfg)?;
        if self.readout.batch_size == 0 {
            return Err(Error::Config("readout.batch_size must be >= 1".into()));
        }
        let f = self.eval.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("eval.train_fraction must be in (0, 1), got {f}")));
        }
        if self.sweep.repeats == 0 {
            return Err(Error::Config("sweep.repeats must be >= 1".into()));
        }
        if self.sweep.radius.is_empty() || self.sweep.size.is_empty() {
            return Err(Error::Config("sweep.radius and sweep.size must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.transfer.alpha) {
            return Err(Error::Config(format!(
                "transfer.alpha must be in [0, 1], got {}",
                self.transfer.alpha
            )));
        }
        for (name, spec) in &self.presets {
            spec.validate()
                .map_err(|e| Error::Config(format!("preset '{name}': {e}")))?;
        }
        Ok(())
    }

    pub fn preset(&self, name: &str) -> Result<&ChannelSpec> {
        self.presets.get(name).ok_or_else(|| {
            let names: Vec<&str> = self.presets.keys().map(String::as_str).collect();
            Error::Config(format!("unknown preset '{name}' (available: {})", names.join(", ")))
        })
    }

    pub fn waveform_spec(&self, seed: u64) -> WaveformSpec {
        let w = &self.waveform;
        WaveformSpec::new(w.sequence_length, w.samples_per_symbol, w.rolloff, w.filter_span, seed)
    }

    /// Seed of the data generated for `preset`.
    pub fn dataset_seed(&self, preset: &str) -> u64 {
        derive_seed(self.seed, tag::DATASET ^ name_tag(preset))
    }

    pub fn reservoir_seed(&self) -> u64 {
        derive_seed(self.seed, tag::RESERVOIR)
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, tag::SPLIT)
    }

    pub fn reservoir_config(&self) -> ReservoirConfig {
        let r = &self.reservoir;
        ReservoirConfig {
            input_dim: r.input_dim,
            reservoir_size: r.reservoir_size,
            output_dim: r.output_dim,
            init: r.init,
            sparsity: r.sparsity,
            spectral_radius: r.spectral_radius,
            activation: r.activation,
            use_feedback: r.use_feedback,
            washout: r.washout,
            seed: self.reservoir_seed(),
            allow_unstable: r.allow_unstable,
        }
    }

    pub fn regression_method(&self) -> RegressionMethod {
        let r = &self.readout;
        match r.method {
            MethodName::Ridge => RegressionMethod::Ridge { lambda: r.lambda },
            MethodName::Linear => RegressionMethod::Linear,
            MethodName::Lasso => RegressionMethod::Lasso {
                lambda: r.lambda,
                max_iter: r.lasso_max_iter,
                tol: r.lasso_tol,
            },
        }
    }

    /// Values for a sweep axis, honoring the `[sweep]` overrides.
    pub fn sweep_values(&self, axis: SweepAxis) -> Vec<SweepValue> {
        match axis {
            SweepAxis::SpectralRadius => self.sweep.radius.iter().map(|&r| SweepValue::Radius(r)).collect(),
            SweepAxis::ReservoirSize => self.sweep.size.iter().map(|&n| SweepValue::Size(n)).collect(),
            SweepAxis::RegressionMethod => vec![
                SweepValue::Regression(RegressionMethod::Ridge {
                    lambda: self.readout.lambda,
                }),
                SweepValue::Regression(RegressionMethod::Linear),
                SweepValue::Regression(RegressionMethod::Lasso {
                    lambda: self.sweep.lasso_lambda,
                    max_iter: self.readout.lasso_max_iter,
                    tol: self.readout.lasso_tol,
                }),
            ],
            other => other.default_values(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_builtin_defaults() {
        assert_eq!(RunConfig::shipped(), RunConfig::default());
        let r = RunConfig::shipped().reservoir_config();
        assert_eq!(
            (r.reservoir_size, r.spectral_radius, r.init, r.activation),
            (578, 0.5, InitMethod::Xavier, Activation::Tanh)
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml_str("[reservoir]\nspectral_radus = 0.5\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("spectral_radus")), "{e}");
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[presets.x]\nkind = \"awgn\"\nsnr_db = 3\nextra = 1\n").is_err());
    }

    #[test]
    fn partial_files_and_presets() {
        let cfg = RunConfig::from_toml_str(
            "seed = 5\n[reservoir]\nreservoir_size = 100\n[presets.quiet]\nkind = \"awgn\"\nsnr_db = \"inf\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.reservoir.reservoir_size, 100);
        assert_eq!(cfg.reservoir.spectral_radius, 0.5);
        assert_eq!(cfg.preset("quiet").unwrap().snr_db(), f64::INFINITY);
        assert!(cfg.preset("data1").is_ok());
        let e = cfg.preset("data9").unwrap_err().to_string();
        assert!(e.contains("data9") && e.contains("bellhop_like"), "{e}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[reservoir]\nspectral_radius = 1.5\n",
            "[eval]\ntrain_fraction = 1.0\n",
            "[transfer]\nalpha = 2.0\n",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seeds_are_derived_per_purpose() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.dataset_seed("data1"), cfg.dataset_seed("data3"));
        assert_ne!(cfg.reservoir_seed(), cfg.split_seed());
    }
}
