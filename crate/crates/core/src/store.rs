//! Binary model (`ESN1`) and dataset (`ESD1`) files, plus CSV export.
//!
//! Both formats are little-endian with fixed-width fields; the exact byte
//! layouts are listed in `docs/FORMATS.md`. Writes go to a temporary file in
//! the destination directory which is then renamed over the target.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetMeta, SequenceDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::readout::{ReadoutModel, RegressionMethod};
use crate::reservoir::{Activation, InitMethod, Reservoir, ReservoirConfig};

pub const MODEL_MAGIC: [u8; 4] = *b"ESN1";
pub const DATASET_MAGIC: [u8; 4] = *b"ESD1";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;
/// Bytes before the provenance block in a model file.
pub const MODEL_HEADER_LEN: usize = 112;
/// Bytes before the provenance block in a dataset file.
pub const DATASET_HEADER_LEN: usize = 88;
pub const CSV_EXPORT_HEADER: &str = "t,i_tx,q_tx,i_rx,q_rx";

const METHOD_RIDGE: u8 = 0;
const METHOD_LINEAR: u8 = 1;
const METHOD_LASSO: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub role: String,
    pub name: String,
    /// Hex SHA-256 from [`SequenceDataset::fingerprint_hex`].
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool_version: String,
    pub master_seed: u64,
    #[serde(default)]
    pub datasets: Vec<DatasetRef>,
}

impl Provenance {
    pub fn new(master_seed: u64) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            datasets: Vec::new(),
        }
    }

    pub fn with_dataset(mut self, role: &str, ds: &SequenceDataset) -> Self {
        self.datasets.push(DatasetRef {
            role: role.to_string(),
            name: ds.meta().name.clone(),
            fingerprint: ds.fingerprint_hex(),
        });
        self
    }
}

/// Everything needed to run a trained ESN elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub reservoir: Reservoir,
    pub readout: ReadoutModel,
    pub provenance: Provenance,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for &v in m.as_slice() {
        put_f64(buf, v);
    }
}

/// Bounds-checked little-endian reader over a fully loaded file.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Vec<f64> {
        (0..rows * cols).map(|_| self.f64()).collect()
    }
}

fn check_magic_and_version(bytes: &[u8], magic: [u8; 4], supported: u32, min_len: usize) -> Result<()> {
    if bytes.len() < 8 || bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::Format(format!(
            "bad magic {found:?}, expected {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != supported {
        return Err(Error::Version {
            found: version,
            supported,
        });
    }
    if bytes.len() < min_len {
        return Err(Error::Integrity {
            expected: min_len as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
}

fn expected_len(parts: &[(u64, u64)]) -> Option<u64> {
    parts
        .iter()
        .try_fold(0u64, |acc, &(count, width)| acc.checked_add(count.checked_mul(width)?))
}

fn provenance_text<T: Serialize>(p: &T) -> Result<String> {
    serde_json::to_string(p).map_err(|e| Error::Format(format!("cannot encode provenance: {e}")))
}

fn parse_provenance<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("provenance is not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| Error::Format(format!("bad provenance block: {e}")))
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_model(artifact: &ModelArtifact) -> Result<Vec<u8>> {
    let res = &artifact.reservoir;
    let cfg = res.config();
    let (method, lambda, max_iter, tol) = match artifact.readout.method() {
        RegressionMethod::Ridge { lambda } => (METHOD_RIDGE, lambda, 0, 0.0),
        RegressionMethod::Linear => (METHOD_LINEAR, 0.0, 0, 0.0),
        RegressionMethod::Lasso { lambda, max_iter, tol } => (METHOD_LASSO, lambda, max_iter, tol),
    };
    let prov = provenance_text(&artifact.provenance)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    put_u32(&mut buf, MODEL_VERSION);
    for d in [cfg.input_dim, cfg.reservoir_size, cfg.output_dim] {
        put_u64(&mut buf, d as u64);
    }
    buf.extend_from_slice(&[
        cfg.init.code(),
        cfg.activation.code(),
        cfg.use_feedback as u8,
        cfg.allow_unstable as u8,
        method,
        0,
        0,
        0,
    ]);
    put_f64(&mut buf, cfg.sparsity);
    put_f64(&mut buf, cfg.spectral_radius);
    put_f64(&mut buf, res.achieved_radius());
    put_u64(&mut buf, cfg.washout as u64);
    put_u64(&mut buf, cfg.seed);
    put_f64(&mut buf, lambda);
    put_u64(&mut buf, max_iter as u64);
    put_f64(&mut buf, tol);
    put_u64(&mut buf, prov.len() as u64);
    debug_assert_eq!(buf.len(), MODEL_HEADER_LEN);
    buf.extend_from_slice(prov.as_bytes());
    put_matrix(&mut buf, res.w_in());
    put_matrix(&mut buf, res.w());
    put_matrix(&mut buf, res.w_fb());
    put_matrix(&mut buf, artifact.readout.w_out());
    let digest = sha256(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelArtifact> {
    check_magic_and_version(bytes, MODEL_MAGIC, MODEL_VERSION, MODEL_HEADER_LEN)?;
    let mut r = Reader { bytes, pos: 8 };
    let (k64, n64, l64) = (r.u64(), r.u64(), r.u64());
    let flags = r.take(8);
    let (init, act, feedback, unstable, method) = (flags[0], flags[1], flags[2], flags[3], flags[4]);
    let sparsity = r.f64();
    let spectral_radius = r.f64();
    let achieved = r.f64();
    let washout = r.u64();
    let seed = r.u64();
    let lambda = r.f64();
    let max_iter = r.u64();
    let tol = r.f64();
    let prov_len = r.u64();

    let expected = expected_len(&[
        (MODEL_HEADER_LEN as u64, 1),
        (prov_len, 1),
        (n64.saturating_mul(k64), 8),
        (n64.saturating_mul(n64), 8),
        (n64.saturating_mul(l64), 8),
        (l64.saturating_mul(n64), 8),
        (32, 1),
    ])
    .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Integrity {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let body = bytes.len() - 32;
    if sha256(&bytes[..body]) != bytes[body..] {
        return Err(Error::Checksum {
            expected: hex(&bytes[body..]),
            actual: hex(&sha256(&bytes[..body])),
        });
    }

    let (k, n, l) = (to_usize(k64, "K")?, to_usize(n64, "N")?, to_usize(l64, "L")?);
    let provenance: Provenance = parse_provenance(r.take(prov_len as usize))?;
    let config = ReservoirConfig {
        input_dim: k,
        reservoir_size: n,
        output_dim: l,
        init: InitMethod::from_code(init).ok_or_else(|| Error::Format(format!("unknown init code {init}")))?,
        sparsity,
        spectral_radius,
        activation: Activation::from_code(act)
            .ok_or_else(|| Error::Format(format!("unknown activation code {act}")))?,
        use_feedback: feedback != 0,
        washout: to_usize(washout, "washout")?,
        seed,
        allow_unstable: unstable != 0,
    };
    let method = match method {
        METHOD_RIDGE => RegressionMethod::Ridge { lambda },
        METHOD_LINEAR => RegressionMethod::Linear,
        METHOD_LASSO => RegressionMethod::Lasso {
            lambda,
            max_iter: to_usize(max_iter, "max_iter")?,
            tol,
        },
        other => return Err(Error::Format(format!("unknown regression code {other}"))),
    };
    let w_in = Matrix::from_vec(n, k, r.matrix(n, k))?;
    let w = Matrix::from_vec(n, n, r.matrix(n, n))?;
    let w_fb = Matrix::from_vec(n, l, r.matrix(n, l))?;
    let w_out = Matrix::from_vec(l, n, r.matrix(l, n))?;
    Ok(ModelArtifact {
        reservoir: Reservoir::from_parts(config, w_in, w, w_fb, achieved)?,
        readout: ReadoutModel::new(w_out, method)?,
        provenance,
    })
}

pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(artifact)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    decode_model(&fs::read(path)?)
}

fn check_iq_dims(k: u64, l: u64) -> Result<()> {
    if k != 2 || l != 2 {
        return Err(Error::shape(
            "dataset file",
            format!("K={k} L={l}"),
            "K=2 L=2 (I/Q in, I/Q out)",
        ));
    }
    Ok(())
}

pub fn encode_dataset(ds: &SequenceDataset) -> Result<Vec<u8>> {
    check_iq_dims(ds.input_dim() as u64, ds.output_dim() as u64)?;
    let prov = provenance_text(ds.meta())?;
    let mut payload = Vec::with_capacity(ds.len() * ds.seq_len() * 4 * 8);
    for v in ds.payload() {
        put_f64(&mut payload, v);
    }
    let mut buf = Vec::with_capacity(DATASET_HEADER_LEN + prov.len() + payload.len());
    buf.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut buf, DATASET_VERSION);
    for d in [ds.len(), ds.seq_len(), ds.input_dim(), ds.output_dim()] {
        put_u64(&mut buf, d as u64);
    }
    put_u64(&mut buf, ds.meta().seed);
    put_u64(&mut buf, prov.len() as u64);
    buf.extend_from_slice(&sha256(&payload));
    debug_assert_eq!(buf.len(), DATASET_HEADER_LEN);
    buf.extend_from_slice(prov.as_bytes());
    buf.extend_from_slice(&payload);
    Ok(buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<SequenceDataset> {
    check_magic_and_version(bytes, DATASET_MAGIC, DATASET_VERSION, DATASET_HEADER_LEN)?;
    let mut r = Reader { bytes, pos: 8 };
    let (count, t_len, k, l) = (r.u64(), r.u64(), r.u64(), r.u64());
    let seed = r.u64();
    let prov_len = r.u64();
    let digest = r.take(32);
    check_iq_dims(k, l)?;
    let payload_len = count
        .checked_mul(t_len)
        .and_then(|v| v.checked_mul((k + l) * 8))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = expected_len(&[(DATASET_HEADER_LEN as u64, 1), (prov_len, 1), (payload_len, 1)])
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Integrity {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut meta: DatasetMeta = parse_provenance(r.take(prov_len as usize))?;
    let payload = &bytes[r.pos..];
    let actual = sha256(payload);
    if actual != digest {
        return Err(Error::Checksum {
            expected: hex(digest),
            actual: hex(&actual),
        });
    }
    if meta.seed != seed {
        return Err(Error::Format(format!(
            "header seed {seed} disagrees with provenance seed {}",
            meta.seed
        )));
    }
    meta.seed = seed;
    let (count, t_len, k, l) = (to_usize(count, "count")?, to_usize(t_len, "T")?, k as usize, l as usize);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u = vec![0.0; k * t_len];
        let mut y = vec![0.0; l * t_len];
        for t in 0..t_len {
            for row in 0..k {
                u[row * t_len + t] = r.f64();
            }
            for row in 0..l {
                y[row * t_len + t] = r.f64();
            }
        }
        inputs.push(Matrix::from_vec(k, t_len, u)?);
        targets.push(Matrix::from_vec(l, t_len, y)?);
    }
    SequenceDataset::new(t_len, k, l, inputs, targets, meta)
}

pub fn save_dataset(ds: &SequenceDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(ds)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SequenceDataset> {
    decode_dataset(&fs::read(path)?)
}

/// One sequence as CSV with columns `t,i_tx,q_tx,i_rx,q_rx`; `t` counts from 1.
pub fn write_sequence_csv<W: Write>(ds: &SequenceDataset, index: usize, w: W) -> Result<()> {
    check_iq_dims(ds.input_dim() as u64, ds.output_dim() as u64)?;
    if index >= ds.len() {
        return Err(Error::invalid(format!(
            "sequence {index} out of range (dataset has {})",
            ds.len()
        )));
    }
    let (u, y) = ds.sequence(index);
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    csv.write_record(CSV_EXPORT_HEADER.split(',')).map_err(io)?;
    for t in 0..ds.seq_len() {
        csv.write_record([
            (t + 1).to_string(),
            u.get(0, t).to_string(),
            u.get(1, t).to_string(),
            y.get(0, t).to_string(),
            y.get(1, t).to_string(),
        ])
        .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes `seq_00000.csv`, `seq_00001.csv`, … into `dir` and returns the paths.
pub fn export_csv(ds: &SequenceDataset, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    (0..ds.len())
        .map(|i| {
            let path = dir.join(format!("seq_{i:05}.csv"));
            let mut buf = Vec::new();
            write_sequence_csv(ds, i, &mut buf)?;
            write_atomic(&path, &buf)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelsim::{generate_dataset, ChannelSpec, WaveformSpec};
    use crate::readout::fit;

    fn small_dataset() -> SequenceDataset {
        let wave = WaveformSpec::new(24, 4, 0.35, 8, 3);
        generate_dataset(&wave, &ChannelSpec::Awgn { snr_db: 20.0 }, 3)
            .unwrap()
            .with_name("awgn")
    }

    fn artifact() -> ModelArtifact {
        let ds = small_dataset();
        let reservoir = Reservoir::build(ReservoirConfig {
            reservoir_size: 12,
            seed: 4,
            ..ReservoirConfig::default()
        })
        .unwrap();
        let readout = fit(&reservoir, &ds, RegressionMethod::default()).unwrap();
        ModelArtifact {
            reservoir,
            readout,
            provenance: Provenance::new(4).with_dataset("train", &ds),
        }
    }

    #[test]
    fn model_round_trip() {
        let a = artifact();
        let bytes = encode_model(&a).unwrap();
        assert_eq!(&bytes[..4], b"ESN1");
        let b = decode_model(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_model(&b).unwrap(), bytes);
    }

    #[test]
    fn model_errors() {
        let mut bytes = encode_model(&artifact()).unwrap();
        let total = bytes.len() as u64;

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));

        let cut = &bytes[..bytes.len() - 100];
        match decode_model(cut) {
            Err(Error::Integrity { expected, actual }) => assert_eq!((expected, actual), (total, total - 100)),
            other => panic!("{other:?}"),
        }

        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_model(&future),
            Err(Error::Version { found: 2, supported: 1 })
        ));

        let last = bytes.len() - 40;
        bytes[last] ^= 1;
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn dataset_round_trip_and_layout() {
        let ds = small_dataset();
        let bytes = encode_dataset(&ds).unwrap();
        let prov_len = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), DATASET_HEADER_LEN + prov_len + 3 * 24 * 4 * 8);
        let first = f64::from_le_bytes(bytes[DATASET_HEADER_LEN + prov_len..][..8].try_into().unwrap());
        assert_eq!(first.to_bits(), ds.inputs()[0].get(0, 0).to_bits());
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn dataset_errors() {
        let bytes = encode_dataset(&small_dataset()).unwrap();
        let mut k3 = bytes.clone();
        k3[24..32].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(decode_dataset(&k3), Err(Error::Shape { .. })));
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 8]),
            Err(Error::Integrity { .. })
        ));
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 0x80;
        assert!(matches!(decode_dataset(&flipped), Err(Error::Checksum { .. })));
        assert!(matches!(decode_dataset(b"ESD"), Err(Error::Format(_))));
    }

    #[test]
    fn csv_export_line_count() {
        let wave = WaveformSpec::new(3, 4, 0.35, 8, 1);
        let ds = generate_dataset(&wave, &ChannelSpec::noiseless_identity(), 2).unwrap();
        let mut buf = Vec::new();
        write_sequence_csv(&ds, 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next(), Some(CSV_EXPORT_HEADER));

        let dir = tempfile::tempdir().unwrap();
        let paths = export_csv(&ds, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[1].ends_with("seq_00001.csv"));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.esn");
        let a = artifact();
        save_model(&a, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), a);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(load_model(dir.path().join("missing.esn")), Err(Error::Io(_))));
    }

    mod props {
        use super::*;
        use crate::dataset::DatasetMeta;
        use proptest::prelude::*;

        fn finite() -> impl Strategy<Value = f64> {
            prop_oneof![
                -1e6f64..1e6,
                Just(0.0),
                Just(-0.0),
                Just(f64::MIN_POSITIVE),
                Just(1e-300)
            ]
        }

        proptest! {
            #[test]
            fn dataset_files_round_trip(n in 0usize..4, t in 1usize..6, seed in any::<u64>(), vals in prop::collection::vec(finite(), 96)) {
                let mut it = vals.iter().cycle().copied();
                let mut mats = |rows| Matrix::from_fn(rows, t, |_, _| it.next().unwrap());
                let inputs: Vec<Matrix> = (0..n).map(|_| mats(2)).collect();
                let targets: Vec<Matrix> = (0..n).map(|_| mats(2)).collect();
                let meta = DatasetMeta { name: format!("p{seed}"), seed, ..DatasetMeta::default() };
                let ds = SequenceDataset::new(t, 2, 2, inputs, targets, meta).unwrap();
                let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
                prop_assert_eq!(encode_dataset(&back).unwrap(), encode_dataset(&ds).unwrap());
                prop_assert_eq!(back, ds);
            }

            #[test]
            fn model_files_round_trip(n in 1usize..10, seed in any::<u64>(), feedback in any::<bool>(), lasso in any::<bool>(), w in prop::collection::vec(finite(), 20)) {
                let config = ReservoirConfig { reservoir_size: n, seed, use_feedback: feedback, ..ReservoirConfig::default() };
                let reservoir = Reservoir::build(config).unwrap();
                let w_out = Matrix::from_fn(2, n, |r, c| w[(r * n + c) % w.len()]);
                let method = if lasso { RegressionMethod::lasso(0.5) } else { RegressionMethod::Linear };
                let a = ModelArtifact {
                    reservoir,
                    readout: ReadoutModel::new(w_out, method).unwrap(),
                    provenance: Provenance::new(seed),
                };
                let back = decode_model(&encode_model(&a).unwrap()).unwrap();
                prop_assert_eq!(back, a);
            }
        }
    }
}
