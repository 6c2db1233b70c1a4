use depvoice::audio_io::{encode_wav, AudioBuffer};
use depvoice::nn::{save_checkpoint, Model, ModelConfig};
use depvoice_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let cfg = ModelConfig {
        stage_blocks: vec![1, 1],
        stage_channels: vec![4, 8],
        input_size: 16,
        arch_tag: "ffi-test".into(),
        ..ModelConfig::default()
    };
    let path = dir.join("tiny.ckpt");
    save_checkpoint(&Model::<f32>::build(&cfg, 3).unwrap(), &path).unwrap();
    path
}

fn chirp(seconds: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * rate as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            (0.4 * (2.0 * std::f64::consts::PI * (200.0 + 300.0 * t) * t).sin()) as f32
        })
        .collect()
}

fn tone_wav(dir: &Path) -> PathBuf {
    let path = dir.join("tone.wav");
    std::fs::write(&path, encode_wav(&AudioBuffer::new(chirp(3.0, 8000), 8000, "t"))).unwrap();
    path
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { dv_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0, "no error recorded");
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(dv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn metrics_match_oracle_rows() {
    let mut m = DvMetrics::default();
    assert_eq!(unsafe { dv_metrics(4, 3, 2, 18, &mut m) }, DvStatus::Ok);
    assert!((m.accuracy - 0.8148).abs() < 1e-4);
    assert!((m.precision - 0.5714).abs() < 1e-4 && m.has_precision == 1);
    assert!((m.recall - 0.6667).abs() < 1e-4 && m.has_recall == 1);
    assert!((m.f1 - 0.6154).abs() < 1e-4);

    assert_eq!(unsafe { dv_metrics(0, 0, 6, 21, &mut m) }, DvStatus::Ok);
    assert_eq!(m.has_precision, 0);
    assert_eq!((m.recall, m.f1), (0.0, 0.0));

    assert_eq!(unsafe { dv_metrics(0, 0, 0, 0, &mut m) }, DvStatus::InvalidArgument);
    assert_eq!(unsafe { dv_metrics(1, 0, 0, 0, ptr::null_mut()) }, DvStatus::NullPointer);
}

#[test]
fn sgdr_matches_core() {
    let s = depvoice::trainer::SgdrSchedule::new(0.2, 1, 2, 5);
    for step in 0..80 {
        let mut lr = 0.0;
        assert_eq!(unsafe { dv_sgdr_lr(0.2, 1, 2, 5, step, &mut lr) }, DvStatus::Ok);
        assert_eq!(lr, depvoice::trainer::sgdr_lr(step, &s));
    }
    let mut lr = 0.0;
    assert_eq!(unsafe { dv_sgdr_lr(0.2, 0, 2, 5, 0, &mut lr) }, DvStatus::InvalidArgument);
    assert!(last_error().contains("cycle"), "{}", last_error());
}

#[test]
fn model_round_trip_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = cstr(&tiny_checkpoint(dir.path()));
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dv_model_load(ckpt.as_ptr(), &mut model) }, DvStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(unsafe { dv_model_input_size(model) }, 16);
    assert_eq!(unsafe { dv_model_num_classes(model) }, 2);

    let wav = cstr(&tone_wav(dir.path()));
    let mut image = ptr::null_mut();
    assert_eq!(unsafe { dv_wav_to_image(wav.as_ptr(), 0.5, 2.0, 16, &mut image) }, DvStatus::Ok);
    let (mut h, mut w) = (0, 0);
    assert_eq!(unsafe { dv_image_dims(image, &mut h, &mut w) }, DvStatus::Ok);
    assert_eq!((h, w), (16, 16));

    let mut plain = [0f32; 2];
    let mut tta = [0f32; 2];
    let mut tta0 = [0f32; 2];
    unsafe {
        assert_eq!(dv_predict(model, image, plain.as_mut_ptr(), 2), DvStatus::Ok);
        assert_eq!(dv_predict_tta(model, image, 4, 9, tta.as_mut_ptr(), 2), DvStatus::Ok);
        assert_eq!(dv_predict_tta(model, image, 0, 9, tta0.as_mut_ptr(), 2), DvStatus::Ok);
    }
    assert_eq!(plain, tta0);
    for p in [plain, tta] {
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
    }

    let resaved = cstr(&dir.path().join("again.ckpt"));
    assert_eq!(unsafe { dv_model_save(model, resaved.as_ptr()) }, DvStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { dv_model_load(resaved.as_ptr(), &mut again) }, DvStatus::Ok);
    let mut p2 = [0f32; 2];
    assert_eq!(unsafe { dv_predict(again, image, p2.as_mut_ptr(), 2) }, DvStatus::Ok);
    assert_eq!(p2, plain);

    unsafe {
        dv_image_free(image);
        dv_model_free(model);
        dv_model_free(again);
        dv_model_free(ptr::null_mut());
        dv_image_free(ptr::null_mut());
    }
}

#[test]
fn samples_path_matches_wav_path() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone_wav(dir.path());
    let (_, audio) = depvoice::audio_io::parse_wav(&std::fs::read(&wav).unwrap()).unwrap();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    let wav_c = cstr(&wav);
    unsafe {
        assert_eq!(dv_wav_to_image(wav_c.as_ptr(), 0.0, 2.5, 24, &mut a), DvStatus::Ok);
        assert_eq!(
            dv_samples_to_image(audio.samples.as_ptr(), audio.len(), 8000, 0.0, 2.5, 24, &mut b),
            DvStatus::Ok
        );
        let model_path = cstr(&tiny_checkpoint(dir.path()));
        let mut model = ptr::null_mut();
        assert_eq!(dv_model_load(model_path.as_ptr(), &mut model), DvStatus::Ok);
        // The model expects 16x16 inputs.
        let mut p = [0f32; 2];
        assert_eq!(dv_predict(model, a, p.as_mut_ptr(), 2), DvStatus::Shape);
        dv_model_free(model);
        let (mut ha, mut hb, mut w) = (0, 0, 0);
        dv_image_dims(a, &mut ha, &mut w);
        dv_image_dims(b, &mut hb, &mut w);
        assert_eq!((ha, hb), (24, 24));
        dv_image_free(a);
        dv_image_free(b);
    }
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = std::ptr::dangling_mut::<DvModel>();
    let missing = cstr(&dir.path().join("missing.ckpt"));
    assert_eq!(unsafe { dv_model_load(missing.as_ptr(), &mut model) }, DvStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("missing.ckpt"));

    let ckpt = tiny_checkpoint(dir.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[20] ^= 0x40;
    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, bytes).unwrap();
    let corrupt_c = cstr(&corrupt);
    assert_eq!(unsafe { dv_model_load(corrupt_c.as_ptr(), &mut model) }, DvStatus::Checksum);

    assert_eq!(unsafe { dv_model_load(ptr::null(), &mut model) }, DvStatus::NullPointer);
    let ckpt_c = cstr(&ckpt);
    assert_eq!(unsafe { dv_model_load(ckpt_c.as_ptr(), ptr::null_mut()) }, DvStatus::NullPointer);

    let not_wav = dir.path().join("x.wav");
    std::fs::write(&not_wav, b"definitely not RIFF").unwrap();
    let mut image = ptr::null_mut();
    let not_wav_c = cstr(&not_wav);
    assert_eq!(unsafe { dv_wav_to_image(not_wav_c.as_ptr(), 0.0, 1.0, 16, &mut image) }, DvStatus::Malformed);

    let wav_c = cstr(&tone_wav(dir.path()));
    assert_eq!(
        unsafe { dv_wav_to_image(wav_c.as_ptr(), 2.0, 5.0, 16, &mut image) },
        DvStatus::InvalidArgument
    );
    assert!(image.is_null());

    // A successful call clears the pending message.
    let mut lr = 0.0;
    assert_eq!(unsafe { dv_sgdr_lr(0.1, 1, 2, 1, 0, &mut lr) }, DvStatus::Ok);
    assert_eq!(unsafe { dv_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn error_message_truncates_safely() {
    let mut lr = 0.0;
    assert_eq!(unsafe { dv_sgdr_lr(-1.0, 1, 2, 1, 0, &mut lr) }, DvStatus::InvalidArgument);
    let full = unsafe { dv_last_error_message(ptr::null_mut(), 0) };
    assert!(full > 4);
    let mut small = [0x7f as c_char; 4];
    assert_eq!(unsafe { dv_last_error_message(small.as_mut_ptr(), 4) }, full);
    assert_eq!(small[3], 0);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/depvoice.h")).unwrap();
    for name in [
        "dv_version",
        "dv_last_error_message",
        "dv_model_load",
        "dv_model_save",
        "dv_model_free",
        "dv_model_input_size",
        "dv_model_num_classes",
        "dv_wav_to_image",
        "dv_samples_to_image",
        "dv_image_dims",
        "dv_image_free",
        "dv_predict",
        "dv_predict_tta",
        "dv_metrics",
        "dv_sgdr_lr",
        "typedef struct DvModel DvModel",
        "typedef struct DvImage DvImage",
        "DV_STATUS_OK = 0",
        "DV_STATUS_PANIC = 9",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles `smoke.c` against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // Integration tests live in target/<profile>/deps; the static library sits one level up.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libdepvoice_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success(), "C compile failed");

    let ckpt = tiny_checkpoint(dir.path());
    let wav = tone_wav(dir.path());
    let out = std::process::Command::new(&bin).arg(&ckpt).arg(&wav).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
