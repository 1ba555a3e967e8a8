use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::ptr;

use xane_core::model::{self, ModelConfig, ModelParams};
use xane_core::rng::SeededRng;
use xane_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(xane_last_error()) }.to_string_lossy().into_owned()
}

fn room() -> XaneRoom {
    XaneRoom {
        length_m: 5.0,
        width_m: 4.0,
        height_m: 3.0,
        reflection_coeff: 0.8,
        speed_of_sound: 0.0,
    }
}

#[test]
fn rir_handle_matches_core() {
    let (src, mic) = ([1.0, 1.5, 1.2], [3.5, 2.5, 1.6]);
    let mut h: *mut XaneRir = ptr::null_mut();
    let st = unsafe { xane_rir_simulate(&room(), src.as_ptr(), mic.as_ptr(), 3, 0.5, &mut h) };
    assert_eq!(st, XaneStatus::Ok);
    let n = unsafe { xane_rir_len(h) };
    let mut taps = vec![0.0; n];
    assert_eq!(unsafe { xane_rir_taps(h, taps.as_mut_ptr(), n) }, XaneStatus::Ok);

    let spec = xane_core::rir::RoomSpec::new(5.0, 4.0, 3.0, 0.8).unwrap();
    let geom = xane_core::rir::Geometry {
        source_xyz: src,
        mic_xyz: mic,
    };
    let ir = xane_core::rir::simulate_rir(&spec, &geom, 3, 0.5).unwrap();
    assert_eq!(taps, ir.taps);
    assert_eq!(unsafe { xane_rir_direct_index(h) }, ir.direct_index);

    let mut labels = XaneReverbLabels {
        c50_db: 0.0,
        c5_db: 0.0,
        drr_db: 0.0,
        t60_ms: 0.0,
        room_volume_m3: 0.0,
        reflection_coeff: 0.0,
    };
    assert_eq!(unsafe { xane_rir_labels(h, &mut labels) }, XaneStatus::Ok);
    let core = xane_core::truth::reverb_labels(&ir).unwrap();
    assert_eq!(labels.c50_db, core.c50_db);
    assert_eq!(labels.room_volume_m3, 60.0);
    unsafe { xane_rir_free(h) };
}

#[test]
fn errors_set_status_and_message() {
    let mut h: *mut XaneRir = ptr::null_mut();
    let outside = [9.0, 1.0, 1.0];
    let mic = [1.0, 1.0, 1.0];
    let st = unsafe { xane_rir_simulate(&room(), outside.as_ptr(), mic.as_ptr(), -1, 0.5, &mut h) };
    assert_eq!(st, XaneStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("inside"), "{}", last_error());

    let st = unsafe { xane_rir_simulate(ptr::null(), mic.as_ptr(), mic.as_ptr(), -1, 0.5, &mut h) };
    assert_eq!(st, XaneStatus::NullPointer);

    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut m: *mut XaneModel = ptr::null_mut();
    assert_eq!(unsafe { xane_model_load(path.as_ptr(), &mut m) }, XaneStatus::Io);
    assert!(!last_error().is_empty());

    unsafe {
        xane_rir_free(ptr::null_mut());
        xane_model_free(ptr::null_mut());
    }
    assert_eq!(unsafe { xane_model_embed_dim(ptr::null()) }, 0);
}

#[test]
fn melfb_two_call_pattern() {
    let x: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
    let frames = xane_frame_count(x.len());
    let mut got = 0usize;
    let mut small = vec![0.0; 10];
    let st = unsafe { xane_melfb(x.as_ptr(), x.len(), small.as_mut_ptr(), small.len(), &mut got) };
    assert_eq!(st, XaneStatus::BufferTooSmall);
    assert_eq!(got, frames);
    let mut out = vec![0.0; frames * XANE_MEL_BANDS];
    let st = unsafe { xane_melfb(x.as_ptr(), x.len(), out.as_mut_ptr(), out.len(), &mut got) };
    assert_eq!(st, XaneStatus::Ok);
    let buf = xane_core::audio::AudioBuffer::new(x.iter().map(|&v| v as f64).collect()).unwrap();
    let core = xane_core::features::melfb(&buf).unwrap();
    assert_eq!(out, core.iter().copied().collect::<Vec<_>>());
}

#[test]
fn model_embed_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig {
        n_mels: 80,
        chunk_frames: 100,
        ..ModelConfig::tiny()
    };
    let params = ModelParams::init(cfg.clone(), 7).unwrap();
    model::save_checkpoint(&params, BTreeMap::new(), &path).unwrap();
    let (loaded, _) = model::load_checkpoint(&path).unwrap();

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m: *mut XaneModel = ptr::null_mut();
    assert_eq!(unsafe { xane_model_load(c.as_ptr(), &mut m) }, XaneStatus::Ok);
    let dim = unsafe { xane_model_embed_dim(m) };
    assert_eq!(dim, cfg.embed_dim);

    let mut rng = SeededRng::new(1, 1);
    let x: Vec<f32> = (0..33000).map(|_| 0.1 * rng.normal() as f32).collect();
    let mut emb = vec![0.0; dim];
    let st = unsafe { xane_model_embed(m, x.as_ptr(), x.len(), emb.as_mut_ptr(), dim) };
    assert_eq!(st, XaneStatus::Ok, "{}", last_error());
    let buf = xane_core::audio::AudioBuffer::new(x.iter().map(|&v| v as f64).collect()).unwrap();
    let chunks = xane_core::features::extract_chunks(&buf, "u").unwrap();
    assert_eq!(chunks.len(), 2);
    let a = loaded.forward(&chunks[0]).unwrap().embedding;
    let b = loaded.forward(&chunks[1]).unwrap().embedding;
    for i in 0..dim {
        assert!((emb[i] - (a[i] / 2.0 + b[i] / 2.0)).abs() < 1e-12);
    }

    let feats: Vec<f64> = chunks[0].matrix.iter().copied().collect();
    let mut reg = [0.0; XANE_REGRESSION_OUTPUTS];
    let mut cls = [0i32; 3];
    let st = unsafe { xane_model_predict(m, feats.as_ptr(), 100, 80, reg.as_mut_ptr(), cls.as_mut_ptr()) };
    assert_eq!(st, XaneStatus::Ok);
    assert!(reg.iter().all(|v| v.is_finite()));
    assert!(cls.iter().all(|&c| c >= 0));
    let st = unsafe { xane_model_predict(m, feats.as_ptr(), 80, 100, reg.as_mut_ptr(), cls.as_mut_ptr()) };
    assert_eq!(st, XaneStatus::InvalidArgument);
    unsafe { xane_model_free(m) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/xane.h")).unwrap();
    for f in [
        "xane_last_error",
        "xane_checkpoint_version",
        "xane_frame_count",
        "xane_melfb",
        "xane_model_load",
        "xane_model_embed_dim",
        "xane_model_embed",
        "xane_model_predict",
        "xane_model_free",
        "xane_rir_simulate",
        "xane_rir_len",
        "xane_rir_direct_index",
        "xane_rir_taps",
        "xane_rir_labels",
        "xane_rir_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing");
    }
    assert!(header.contains("typedef struct XaneModel XaneModel;"));
    assert_eq!(xane_checkpoint_version(), model::CHECKPOINT_VERSION);
}

/// The header must compile as C when a compiler is available.
#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"xane.h\"\nint main(void) { XaneRoom r = {5, 4, 3, 0.8, 0}; (void)r; return XANE_STATUS_OK; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output();
    match out {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
