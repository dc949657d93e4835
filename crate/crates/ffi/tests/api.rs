use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use fragmentvc::cli::{RunConfig, CONFIG_FILE};
use fragmentvc::model::{FragmentVc, ModelConfig};
use fragmentvc::train::{NormStats, TrainConfig, Trainer};
use fragmentvc_ffi::*;

fn small_config() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            d_model: 16,
            upstream_dim: 24,
            n_smoothers: 1,
            ..ModelConfig::default()
        },
        train: TrainConfig::default(),
        ..RunConfig::default()
    }
}

fn write_checkpoint(dir: &Path) -> CString {
    let cfg = small_config();
    let model = FragmentVc::new(cfg.model.clone(), 3).unwrap();
    let trainer = Trainer::new(model, cfg.train.clone(), NormStats::identity(80)).unwrap();
    let path = dir.join("model.fvck");
    trainer.checkpoint().save(&path).unwrap();
    cfg.save(&dir.join(CONFIG_FILE)).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = fvc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sine(n: usize, freq: f32) -> Vec<f32> {
    (0..n)
        .map(|i| 0.3 * (2.0 * std::f32::consts::PI * freq * i as f32 / 16000.0).sin())
        .collect()
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(fvc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn convert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path());
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(fvc_model_load(ckpt.as_ptr(), ptr::null(), &mut model), FvcStatus::Ok);
        let (mut n_mel, mut dim, mut n_ext) = (0, 0, 0);
        assert_eq!(fvc_model_dims(model, &mut n_mel, &mut dim, &mut n_ext), FvcStatus::Ok);
        assert_eq!((n_mel, dim, n_ext), (80, 24, 3));

        let src_wave = sine(8000, 300.0);
        let tgt_wave = sine(12000, 500.0);
        let (mut src_mel, mut tgt_mel) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(fvc_log_mel(src_wave.as_ptr(), src_wave.len(), &mut src_mel), FvcStatus::Ok);
        assert_eq!(fvc_log_mel(tgt_wave.as_ptr(), tgt_wave.len(), &mut tgt_mel), FvcStatus::Ok);
        let (mut t, mut m) = (0, 0);
        fvc_matrix_shape(src_mel, &mut t, &mut m);
        assert_eq!((t, m), (24, 80));

        let mut feats = ptr::null_mut();
        assert_eq!(fvc_model_features(model, src_mel, &mut feats), FvcStatus::Ok);
        let targets = [tgt_mel as *const FvcMatrix];
        let mut out = ptr::null_mut();
        let mut attn = [ptr::null_mut::<FvcMatrix>(); 3];
        let status = fvc_convert(model, feats, targets.as_ptr(), 1, &mut out, attn.as_mut_ptr(), 3);
        assert_eq!(status, FvcStatus::Ok);
        fvc_matrix_shape(out, &mut t, &mut m);
        assert_eq!((t, m), (24, 80));
        let mut buf = vec![0.0f32; t * m];
        assert_eq!(fvc_matrix_copy(out, buf.as_mut_ptr(), buf.len()), FvcStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite()));

        let (mut ar, mut ac) = (0, 0);
        fvc_matrix_shape(attn[2], &mut ar, &mut ac);
        assert_eq!((ar, ac), (24, 37));
        let mut score = -1.0;
        assert_eq!(fvc_diagonality(attn[2], &mut score), FvcStatus::Ok);
        assert!((0.0..=1.0).contains(&score));

        for h in [src_mel, tgt_mel, feats, out] {
            fvc_matrix_free(h);
        }
        for h in attn {
            fvc_matrix_free(h);
        }
        fvc_model_free(model);
    }
}

#[test]
fn errors_report_status_and_message() {
    unsafe {
        let missing = CString::new("/nonexistent/model.fvck").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(fvc_model_load(missing.as_ptr(), ptr::null(), &mut model), FvcStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("model.fvck"));

        assert_eq!(fvc_model_load(ptr::null(), ptr::null(), &mut model), FvcStatus::NullArgument);
        assert!(last_error().contains("checkpoint_path"));

        let short = [0.0f32; 100];
        let mut mel = ptr::null_mut();
        assert_eq!(fvc_log_mel(short.as_ptr(), short.len(), &mut mel), FvcStatus::InvalidArgument);

        let data = [1.0f32; 4];
        let mut m = ptr::null_mut();
        assert_eq!(fvc_matrix_new(2, 2, data.as_ptr(), &mut m), FvcStatus::Ok);
        let mut buf = [0.0f32; 3];
        assert_eq!(fvc_matrix_copy(m, buf.as_mut_ptr(), 3), FvcStatus::InvalidArgument);
        assert_eq!(fvc_matrix_new(0, 2, data.as_ptr(), &mut m), FvcStatus::Shape);
        fvc_matrix_free(m);
        fvc_matrix_free(ptr::null_mut());
        fvc_model_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.fvck");
    std::fs::write(&path, b"NOPE0000").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fvc_model_load(c.as_ptr(), ptr::null(), &mut model) }, FvcStatus::Format);
}

#[test]
fn rms_and_diagonality() {
    unsafe {
        let w = [0.3f32, 0.4];
        let mut out = ptr::null_mut();
        assert_eq!(fvc_combine_heads_rms(w.as_ptr(), 2, 1, 1, &mut out), FvcStatus::Ok);
        let v = *fvc_matrix_data(out);
        assert!((v - 0.353_553_4).abs() < 1e-6);
        fvc_matrix_free(out);

        let uniform = [1.0f32 / 3.0; 9];
        let mut m = ptr::null_mut();
        fvc_matrix_new(3, 3, uniform.as_ptr(), &mut m);
        let mut score = 0.0;
        assert_eq!(fvc_diagonality(m, &mut score), FvcStatus::Ok);
        assert!((score - 4.0 / 9.0).abs() < 1e-6);
        fvc_matrix_free(m);
    }
}
