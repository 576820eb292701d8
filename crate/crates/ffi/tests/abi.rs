use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use echochan::channelsim::{generate_dataset, ChannelSpec, WaveformSpec};
use echochan::eval::evaluate;
use echochan::readout::{fit, RegressionMethod};
use echochan::reservoir::{Reservoir, ReservoirConfig};
use echochan::store::{save_dataset, save_model, ModelArtifact, Provenance};
use echochan_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model: PathBuf,
    data: PathBuf,
    artifact: ModelArtifact,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let wave = WaveformSpec::new(64, 4, 0.35, 8, 11);
    let ds = generate_dataset(&wave, &ChannelSpec::Awgn { snr_db: 25.0 }, 6).unwrap();
    let reservoir = Reservoir::build(ReservoirConfig {
        reservoir_size: 30,
        washout: 4,
        seed: 3,
        ..ReservoirConfig::default()
    })
    .unwrap();
    let readout = fit(&reservoir, &ds, RegressionMethod::default()).unwrap();
    let artifact = ModelArtifact {
        reservoir,
        readout,
        provenance: Provenance::new(3),
    };
    let (model, data) = (dir.path().join("m.esn"), dir.path().join("d.esd"));
    save_model(&artifact, &model).unwrap();
    save_dataset(&ds, &data).unwrap();
    Fixture {
        _dir: dir,
        model,
        data,
        artifact,
    }
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = echochan_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(echochan_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_evaluate_and_free() {
    let fx = fixture();
    let (mut m, mut d) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(
            echochan_model_load(c_path(&fx.model).as_ptr(), &mut m),
            EchochanStatus::Ok
        );
        assert_eq!(
            echochan_dataset_load(c_path(&fx.data).as_ptr(), &mut d),
            EchochanStatus::Ok
        );
        assert!(echochan_last_error().is_null());

        let (mut k, mut n, mut l, mut w) = (0, 0, 0, 0);
        assert_eq!(
            echochan_model_dims(m, &mut k, &mut n, &mut l, &mut w),
            EchochanStatus::Ok
        );
        assert_eq!((k, n, l, w), (2, 30, 2, 4));
        let (mut count, mut t) = (0, 0);
        assert_eq!(
            echochan_dataset_info(d, &mut count, &mut t, &mut k, &mut l),
            EchochanStatus::Ok
        );
        assert_eq!((count, t, k, l), (6, 64, 2, 2));

        let mut report = EchochanReport::default();
        assert_eq!(echochan_evaluate(m, d, &mut report), EchochanStatus::Ok);
        let ds = echochan::store::load_dataset(&fx.data).unwrap();
        let expected = evaluate(&fx.artifact.reservoir, &fx.artifact.readout, &ds).unwrap();
        assert_eq!(report.mape_percent.to_bits(), expected.mape_percent.to_bits());
        assert_eq!(report.samples_used + report.samples_excluded, 6 * 60 * 2);

        echochan_model_free(m);
        echochan_dataset_free(d);
        echochan_model_free(ptr::null_mut());
    }
}

#[test]
fn predict_matches_rust_and_checks_buffer() {
    let fx = fixture();
    let ds = echochan::store::load_dataset(&fx.data).unwrap();
    let u = &ds.inputs()[0];
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(
            echochan_model_load(c_path(&fx.model).as_ptr(), &mut m),
            EchochanStatus::Ok
        );
        let mut need = 0;
        let mut small = vec![0.0; 3];
        let s = echochan_model_predict(m, u.as_slice().as_ptr(), 64, small.as_mut_ptr(), small.len(), &mut need);
        assert_eq!(s, EchochanStatus::BufferTooSmall);
        assert_eq!(need, 2 * 60);
        let mut out = vec![0.0; need];
        let s = echochan_model_predict(
            m,
            u.as_slice().as_ptr(),
            64,
            out.as_mut_ptr(),
            out.len(),
            ptr::null_mut(),
        );
        assert_eq!(s, EchochanStatus::Ok);
        let traj = fx.artifact.reservoir.harvest(u, None).unwrap();
        let want = fx.artifact.readout.predict(&traj).unwrap();
        assert_eq!(out, want.as_slice());
        echochan_model_free(m);
    }
}

#[test]
fn error_codes_and_messages() {
    let fx = fixture();
    let mut m = ptr::null_mut();
    unsafe {
        let missing = CString::new("/nonexistent/model.esn").unwrap();
        assert_eq!(echochan_model_load(missing.as_ptr(), &mut m), EchochanStatus::Data);
        assert!(m.is_null());
        assert!(!last_error().is_empty());

        // A dataset file is not a model.
        assert_eq!(
            echochan_model_load(c_path(&fx.data).as_ptr(), &mut m),
            EchochanStatus::Data
        );
        assert!(last_error().contains("magic"), "{}", last_error());

        assert_eq!(
            echochan_model_load(ptr::null(), &mut m),
            EchochanStatus::InvalidArgument
        );
        assert_eq!(
            echochan_model_load(c_path(&fx.model).as_ptr(), ptr::null_mut()),
            EchochanStatus::InvalidArgument
        );

        let mut report = EchochanReport::default();
        assert_eq!(
            echochan_mape([0.0].as_ptr(), [1.0].as_ptr(), 1, 1e-9, &mut report),
            EchochanStatus::Numeric
        );
        assert!(last_error().contains("excluded"));
    }
}

#[test]
fn mape_and_spectral_radius() {
    let mut r = EchochanReport::default();
    unsafe {
        assert_eq!(
            echochan_mape([100.0, 200.0].as_ptr(), [110.0, 180.0].as_ptr(), 2, 1e-9, &mut r),
            EchochanStatus::Ok
        );
        assert!((r.mape_percent - 10.0).abs() < 1e-12);
        assert_eq!(
            echochan_mape([0.0, 1.0].as_ptr(), [5.0, 1.0].as_ptr(), 2, 1e-9, &mut r),
            EchochanStatus::Ok
        );
        assert_eq!((r.mape_percent, r.samples_excluded), (0.0, 1));

        let mut rho = 0.0;
        let rot = [0.0, -2.0, 2.0, 0.0];
        assert_eq!(echochan_spectral_radius(rot.as_ptr(), 2, &mut rho), EchochanStatus::Ok);
        assert!((rho - 2.0).abs() < 1e-12);
        assert_eq!(echochan_spectral_radius(ptr::null(), 0, &mut rho), EchochanStatus::Ok);
        assert_eq!(rho, 0.0);
        let nan = [f64::NAN];
        assert_eq!(
            echochan_spectral_radius(nan.as_ptr(), 1, &mut rho),
            EchochanStatus::Numeric
        );
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/echochan.h")).unwrap();
    for f in [
        "echochan_version",
        "echochan_last_error",
        "echochan_model_load",
        "echochan_model_free",
        "echochan_model_dims",
        "echochan_model_predict",
        "echochan_dataset_load",
        "echochan_dataset_free",
        "echochan_dataset_info",
        "echochan_evaluate",
        "echochan_spectral_radius",
        "echochan_mape",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct EchochanModel EchochanModel;"));
}

/// Compiles the C smoke program against the header and static library, when
/// a C compiler and the library are available.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target"));
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = [
        profile_dir.join("libechochan_ffi.a"),
        target.join("debug/libechochan_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists());
    let (Some(lib), true) = (lib, Command::new("cc").arg("--version").output().is_ok()) else {
        eprintln!("skipping: no C compiler or static library");
        return;
    };
    let fx = fixture();
    let exe = fx.model.with_file_name("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(&fx.model).arg(&fx.data).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
}
