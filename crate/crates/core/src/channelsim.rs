//! Synthetic transmit/receive I/Q data.
//!
//! The transmit chain is random bits → Gray-coded QPSK → upsampling →
//! raised-cosine pulse shaping. The received signal passes the transmitted
//! samples through either an AWGN channel or a tapped-delay multipath channel
//! whose complex tap gains can be slowly modulated ("disturbance"), followed
//! by AWGN. Row 0 of every sequence matrix is I, row 1 is Q.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::RngExt;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::dataset::{DatasetMeta, SequenceDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, derive_seed, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tap {
    pub delay: usize,
    pub gain_i: f64,
    pub gain_q: f64,
}

impl Tap {
    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gain_i, self.gain_q)
    }
}

/// `snr_db = inf` disables noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Awgn {
        #[serde(with = "snr_repr")]
        snr_db: f64,
    },
    Multipath {
        taps: Vec<Tap>,
        /// Fractional amplitude of the sinusoidal tap-gain modulation.
        disturbance: f64,
        /// Modulation period in samples.
        disturbance_period: usize,
        #[serde(with = "snr_repr")]
        snr_db: f64,
    },
}

/// Infinite SNR is written as the string `"inf"` so it survives formats
/// without an infinity literal.
mod snr_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v > 0.0 => s.serialize_str("inf"),
            v if v < 0.0 => s.serialize_str("-inf"),
            _ => s.serialize_str("nan"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

impl ChannelSpec {
    pub fn noiseless_identity() -> Self {
        ChannelSpec::Multipath {
            taps: vec![Tap {
                delay: 0,
                gain_i: 1.0,
                gain_q: 0.0,
            }],
            disturbance: 0.0,
            disturbance_period: 1,
            snr_db: f64::INFINITY,
        }
    }

    pub fn snr_db(&self) -> f64 {
        match self {
            ChannelSpec::Awgn { snr_db } | ChannelSpec::Multipath { snr_db, .. } => *snr_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db().is_nan() {
            return Err(Error::invalid("snr_db must not be NaN"));
        }
        if let ChannelSpec::Multipath {
            taps,
            disturbance,
            disturbance_period,
            ..
        } = self
        {
            if taps.is_empty() {
                return Err(Error::invalid("multipath channel needs at least one tap"));
            }
            if taps.windows(2).any(|w| w[1].delay <= w[0].delay) {
                return Err(Error::invalid("tap delays must be strictly increasing"));
            }
            if taps.iter().any(|t| !(t.gain_i.is_finite() && t.gain_q.is_finite())) {
                return Err(Error::invalid("tap gains must be finite"));
            }
            if !(0.0..=1.0).contains(disturbance) {
                return Err(Error::invalid(format!(
                    "disturbance must be in [0, 1], got {disturbance}"
                )));
            }
            if *disturbance_period == 0 {
                return Err(Error::invalid("disturbance period must be >= 1 sample"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSpec {
    pub bits_per_sequence: usize,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub filter_span: usize,
    pub sequence_length: usize,
    pub seed: u64,
}

impl WaveformSpec {
    /// Derives `bits_per_sequence` so the symbols cover `sequence_length`.
    pub fn new(sequence_length: usize, samples_per_symbol: usize, rolloff: f64, filter_span: usize, seed: u64) -> Self {
        WaveformSpec {
            bits_per_sequence: 2 * sequence_length.div_ceil(samples_per_symbol.max(1)),
            samples_per_symbol,
            rolloff,
            filter_span,
            sequence_length,
            seed,
        }
    }

    pub fn symbols(&self) -> usize {
        self.bits_per_sequence / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol == 0 {
            return Err(Error::invalid("samples_per_symbol must be >= 1"));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::invalid(format!(
                "rolloff must be in (0, 1], got {}",
                self.rolloff
            )));
        }
        if self.filter_span < 2 || (self.filter_span * self.samples_per_symbol) % 2 != 0 {
            return Err(Error::invalid(format!(
                "filter span {} x {} samples/symbol must be >= 2 symbols and an even number of samples",
                self.filter_span, self.samples_per_symbol
            )));
        }
        if self.sequence_length == 0 {
            return Err(Error::invalid("sequence_length must be >= 1"));
        }
        let want = 2 * self.sequence_length.div_ceil(self.samples_per_symbol);
        if self.bits_per_sequence != want {
            return Err(Error::invalid(format!(
                "bits_per_sequence {} inconsistent with length {} at {} samples/symbol (expected {want})",
                self.bits_per_sequence, self.sequence_length, self.samples_per_symbol
            )));
        }
        Ok(())
    }
}

/// Gray-coded QPSK: 00 → (+,+), 01 → (−,+), 11 → (−,−), 10 → (+,−), scaled
/// to unit energy.
pub fn qpsk_modulate(bits: &[bool]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::OddBitCount(bits.len()));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|p| {
            let i = if p[1] { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
            let q = if p[0] { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
            Complex64::new(i, q)
        })
        .collect())
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Raised-cosine impulse response at `t` symbol periods.
pub fn raised_cosine(t: f64, beta: f64) -> f64 {
    let d = 2.0 * beta * t;
    if (1.0 - d * d).abs() < 1e-10 {
        PI / 4.0 * sinc(1.0 / (2.0 * beta))
    } else {
        sinc(t) * (PI * beta * t).cos() / (1.0 - d * d)
    }
}

/// `span · sps + 1` samples of the raised-cosine pulse centered on t = 0.
pub fn raised_cosine_taps(beta: f64, span: usize, sps: usize) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("rolloff must be in (0, 1], got {beta}")));
    }
    if span < 2 || sps == 0 || (span * sps) % 2 != 0 {
        return Err(Error::invalid(format!(
            "invalid raised-cosine span {span} / samples per symbol {sps}"
        )));
    }
    let half = (span * sps / 2) as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|n| raised_cosine(n as f64 / sps as f64, beta))
        .collect();
    let center = taps[half as usize];
    Ok(taps.into_iter().map(|h| h / center).collect())
}

/// Upsamples and filters `symbols`, compensating the filter's group delay so
/// sample `k · sps` carries symbol `k`. Returns `len` samples.
pub fn pulse_shape(symbols: &[Complex64], sps: usize, taps: &[f64], len: usize) -> Vec<Complex64> {
    let delay = (taps.len() - 1) / 2;
    (0..len)
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, s) in symbols.iter().enumerate() {
                let idx = n as isize - (k * sps) as isize + delay as isize;
                if idx >= 0 && (idx as usize) < taps.len() {
                    acc += s * taps[idx as usize];
                }
            }
            acc
        })
        .collect()
}

fn check_iq(tx: &Matrix) -> Result<()> {
    if tx.rows() != 2 {
        return Err(Error::shape("apply_channel", tx.shape_str(), "2xT (I/Q)"));
    }
    Ok(())
}

/// Mean of I² + Q² over all samples.
pub fn signal_power(m: &Matrix) -> f64 {
    if m.cols() == 0 {
        return 0.0;
    }
    m.as_slice().iter().map(|v| v * v).sum::<f64>() / m.cols() as f64
}

fn add_noise(signal: &mut Matrix, snr_db: f64, seed: u64) {
    if snr_db == f64::INFINITY {
        return;
    }
    let p = signal_power(signal);
    let sigma = (p * 10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = stream(seed, rng::stream::NOISE);
    let t = signal.cols();
    for c in 0..t {
        for r in 0..2 {
            let v = signal.get(r, c) + normal.sample(&mut rng);
            signal.set(r, c, v);
        }
    }
}

/// Passes a 2 × T transmitted sequence through `spec`.
pub fn apply_channel(spec: &ChannelSpec, tx: &Matrix, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    check_iq(tx)?;
    let mut rx = match spec {
        ChannelSpec::Awgn { .. } => tx.clone(),
        ChannelSpec::Multipath {
            taps,
            disturbance,
            disturbance_period,
            ..
        } => {
            let mut phase_rng = stream(seed, rng::stream::PHASES);
            let phases: Vec<f64> = taps.iter().map(|_| phase_rng.random_range(0.0..2.0 * PI)).collect();
            let t_len = tx.cols();
            let mut out = Matrix::zeros(2, t_len);
            for t in 0..t_len {
                let mut acc = Complex64::new(0.0, 0.0);
                for (tap, phi) in taps.iter().zip(&phases) {
                    if tap.delay > t {
                        continue;
                    }
                    let s = Complex64::new(tx.get(0, t - tap.delay), tx.get(1, t - tap.delay));
                    let g = if *disturbance == 0.0 {
                        tap.gain()
                    } else {
                        let m = 1.0 + disturbance * (2.0 * PI * t as f64 / *disturbance_period as f64 + phi).sin();
                        tap.gain() * m
                    };
                    acc += g * s;
                }
                out.set(0, t, acc.re);
                out.set(1, t, acc.im);
            }
            out
        }
    };
    add_noise(&mut rx, spec.snr_db(), seed);
    Ok(rx)
}

/// Transmitted I/Q samples for one sequence.
pub fn transmit(wave: &WaveformSpec, seq_seed: u64) -> Result<Matrix> {
    wave.validate()?;
    let mut rng = stream(seq_seed, rng::stream::BITS);
    let bits: Vec<bool> = (0..wave.bits_per_sequence).map(|_| rng.random()).collect();
    let symbols = qpsk_modulate(&bits)?;
    let taps = raised_cosine_taps(wave.rolloff, wave.filter_span, wave.samples_per_symbol)?;
    let samples = pulse_shape(&symbols, wave.samples_per_symbol, &taps, wave.sequence_length);
    let mut m = Matrix::zeros(2, wave.sequence_length);
    for (t, s) in samples.iter().enumerate() {
        m.set(0, t, s.re);
        m.set(1, t, s.im);
    }
    Ok(m)
}

/// Generates `num_sequences` transmit/receive pairs. Sequence `i` uses the
/// seed `derive_seed(wave.seed, i)`, so serial and parallel generation agree.
pub fn generate_dataset(wave: &WaveformSpec, chan: &ChannelSpec, num_sequences: usize) -> Result<SequenceDataset> {
    wave.validate()?;
    chan.validate()?;
    let pairs: Vec<(Matrix, Matrix)> = (0..num_sequences)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(wave.seed, i as u64);
            let tx = transmit(wave, s)?;
            let rx = apply_channel(chan, &tx, derive_seed(s, tag::CHANNEL))?;
            Ok((tx, rx))
        })
        .collect::<Result<_>>()?;
    let (inputs, targets) = pairs.into_iter().unzip();
    let meta = DatasetMeta {
        name: String::new(),
        seed: wave.seed,
        waveform: Some(*wave),
        channel: Some(chan.clone()),
    };
    SequenceDataset::new(wave.sequence_length, 2, 2, inputs, targets, meta)
}

fn without_noise(spec: &ChannelSpec) -> ChannelSpec {
    let mut clean = spec.clone();
    match &mut clean {
        ChannelSpec::Awgn { snr_db } | ChannelSpec::Multipath { snr_db, .. } => *snr_db = f64::INFINITY,
    }
    clean
}

/// Realized SNR in dB: noiseless channel output power over the power of the
/// added noise. The noiseless output is regenerated from the dataset's
/// recorded waveform and channel; without that record the transmitted signal
/// stands in for it, so channel distortion then counts as noise.
pub fn measured_snr_db(ds: &SequenceDataset) -> f64 {
    let meta = ds.meta();
    let clean: Option<Vec<Matrix>> = match (&meta.waveform, &meta.channel) {
        (Some(wave), Some(chan)) => {
            let chan = without_noise(chan);
            (0..ds.len())
                .into_par_iter()
                .map(|i| {
                    let s = derive_seed(wave.seed, i as u64);
                    apply_channel(&chan, &ds.inputs()[i], derive_seed(s, tag::CHANNEL))
                })
                .collect::<Result<_>>()
                .ok()
        }
        _ => None,
    };
    let reference = clean.as_deref().unwrap_or(ds.inputs());
    let (mut sig, mut err) = (0.0, 0.0);
    for (c, y) in reference.iter().zip(ds.targets()) {
        for (a, b) in c.as_slice().iter().zip(y.as_slice()) {
            sig += a * a;
            err += (b - a) * (b - a);
        }
    }
    10.0 * (sig / err).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(seed: u64) -> WaveformSpec {
        WaveformSpec::new(578, 4, 0.35, 8, seed)
    }

    fn two_tap() -> ChannelSpec {
        ChannelSpec::Multipath {
            taps: vec![
                Tap {
                    delay: 0,
                    gain_i: 0.9,
                    gain_q: 0.1,
                },
                Tap {
                    delay: 3,
                    gain_i: -0.3,
                    gain_q: 0.4,
                },
            ],
            disturbance: 0.0,
            disturbance_period: 100,
            snr_db: f64::INFINITY,
        }
    }

    #[test]
    fn qpsk_mapping() {
        let s = qpsk_modulate(&[false, false, true, true, false, true, true, false]).unwrap();
        let h = FRAC_1_SQRT_2;
        assert_eq!(s[0], Complex64::new(h, h));
        assert_eq!(s[1], Complex64::new(-h, -h));
        assert_eq!(s[2], Complex64::new(-h, h));
        assert_eq!(s[3], Complex64::new(h, -h));
        for z in &s {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(qpsk_modulate(&[true]), Err(Error::OddBitCount(1))));
    }

    #[test]
    fn raised_cosine_analytics() {
        assert_eq!(raised_cosine(0.0, 0.35), 1.0);
        assert!((raised_cosine(0.5, 1.0) - 0.5).abs() < 1e-12);
        let taps = raised_cosine_taps(0.35, 8, 4).unwrap();
        assert_eq!(taps.len(), 33);
        assert_eq!(taps[16], 1.0);
        for k in 1..=4 {
            assert!(taps[16 + 4 * k].abs() < 1e-12);
            assert!(taps[16 - 4 * k].abs() < 1e-12);
        }
        let one = raised_cosine_taps(1.0, 4, 2).unwrap();
        assert!((one[5] - 0.5).abs() < 1e-12);
        assert!(raised_cosine_taps(0.0, 8, 4).is_err());
        assert!(raised_cosine_taps(0.3, 1, 4).is_err());
    }

    #[test]
    fn pulse_shape_hits_symbols_at_sampling_instants() {
        let w = wave(1);
        let mut rng = stream(9, 0);
        let bits: Vec<bool> = (0..w.bits_per_sequence).map(|_| rng.random()).collect();
        let symbols = qpsk_modulate(&bits).unwrap();
        let taps = raised_cosine_taps(w.rolloff, w.filter_span, w.samples_per_symbol).unwrap();
        let out = pulse_shape(&symbols, 4, &taps, 578);
        for k in 0..144 {
            assert!((out[4 * k] - symbols[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn awgn_noise_variance() {
        let tx = Matrix::from_fn(2, 200_000, |r, _| if r == 0 { 1.0 } else { 0.0 });
        let rx = apply_channel(&ChannelSpec::Awgn { snr_db: 20.0 }, &tx, 3).unwrap();
        let noise = rx.sub(&tx).unwrap();
        let var = signal_power(&noise);
        assert!((var - 0.01).abs() < 0.0005, "{var}");
        let clean = apply_channel(&ChannelSpec::Awgn { snr_db: f64::INFINITY }, &tx, 3).unwrap();
        assert_eq!(clean, tx);
    }

    #[test]
    fn identity_multipath_is_identity() {
        let tx = transmit(&wave(2), 5).unwrap();
        assert_eq!(apply_channel(&ChannelSpec::noiseless_identity(), &tx, 1).unwrap(), tx);
    }

    #[test]
    fn two_tap_matches_direct_convolution() {
        let tx = transmit(&wave(3), 6).unwrap();
        let rx = apply_channel(&two_tap(), &tx, 1).unwrap();
        let (g0, g1) = (Complex64::new(0.9, 0.1), Complex64::new(-0.3, 0.4));
        for t in 0..tx.cols() {
            let mut want = g0 * Complex64::new(tx.get(0, t), tx.get(1, t));
            if t >= 3 {
                want += g1 * Complex64::new(tx.get(0, t - 3), tx.get(1, t - 3));
            }
            assert!((rx.get(0, t) - want.re).abs() < 1e-12);
            assert!((rx.get(1, t) - want.im).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_spec_validation() {
        let bad = ChannelSpec::Multipath {
            taps: vec![
                Tap {
                    delay: 2,
                    gain_i: 1.0,
                    gain_q: 0.0,
                },
                Tap {
                    delay: 2,
                    gain_i: 1.0,
                    gain_q: 0.0,
                },
            ],
            disturbance: 0.0,
            disturbance_period: 10,
            snr_db: 10.0,
        };
        assert!(bad.validate().is_err());
        let tx = Matrix::zeros(3, 10);
        assert!(matches!(apply_channel(&two_tap(), &tx, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn dataset_generation_properties() {
        let w = wave(11);
        let empty = generate_dataset(&w, &two_tap(), 0).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.seq_len(), 578);
        let id = generate_dataset(&w, &ChannelSpec::noiseless_identity(), 3).unwrap();
        assert_eq!(id.inputs(), id.targets());
        let a = generate_dataset(&w, &ChannelSpec::Awgn { snr_db: 15.0 }, 4).unwrap();
        let b = generate_dataset(&w, &ChannelSpec::Awgn { snr_db: 15.0 }, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta().waveform, Some(w));
    }

    #[test]
    fn awgn_dataset_snr_within_half_db() {
        let ds = generate_dataset(&wave(12), &ChannelSpec::Awgn { snr_db: 12.0 }, 200).unwrap();
        assert!(ds.len() * ds.seq_len() >= 100_000);
        let snr = measured_snr_db(&ds);
        assert!((snr - 12.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn multipath_snr_is_measured_on_the_faded_signal() {
        let chan = ChannelSpec::Multipath {
            taps: vec![
                Tap {
                    delay: 0,
                    gain_i: 0.6,
                    gain_q: 0.0,
                },
                Tap {
                    delay: 2,
                    gain_i: 0.3,
                    gain_q: 0.3,
                },
            ],
            disturbance: 0.3,
            disturbance_period: 200,
            snr_db: 18.0,
        };
        let ds = generate_dataset(&wave(4), &chan, 200).unwrap();
        let snr = measured_snr_db(&ds);
        assert!((snr - 18.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn waveform_consistency() {
        let w = wave(0);
        assert_eq!(w.bits_per_sequence, 290);
        assert!(w.validate().is_ok());
        let bad = WaveformSpec {
            bits_per_sequence: 100,
            ..w
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_iq(seed: u64, t: usize) -> Matrix {
            let mut r = stream(seed, 0);
            Matrix::from_fn(2, t, |_, _| r.random_range(-1.0..1.0))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn noiseless_lti_channel_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let x = random_iq(seed, 120);
                let y = random_iq(seed ^ 1, 120);
                let ch = two_tap();
                let mix = x.scale(a).add(&y.scale(b)).unwrap();
                let lhs = apply_channel(&ch, &mix, 7).unwrap();
                let rhs = apply_channel(&ch, &x, 7).unwrap().scale(a).add(&apply_channel(&ch, &y, 7).unwrap().scale(b)).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }

            #[test]
            fn static_multipath_is_time_invariant(seed in any::<u64>(), shift in 1usize..20) {
                let x = random_iq(seed, 100);
                let shifted = Matrix::from_fn(2, 100 + shift, |r, c| if c >= shift { x.get(r, c - shift) } else { 0.0 });
                let ch = two_tap();
                let a = apply_channel(&ch, &x, 3).unwrap();
                let b = apply_channel(&ch, &shifted, 3).unwrap();
                for t in 0..100 {
                    prop_assert!((a.get(0, t) - b.get(0, t + shift)).abs() < 1e-12);
                    prop_assert!((a.get(1, t) - b.get(1, t + shift)).abs() < 1e-12);
                }
            }
        }
    }
}
