use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use jointslu::cli::{save_checkpoint, Checkpoint, RunConfig};
use jointslu::data::{synth_generate, SynthSpec, Vocab};
use jointslu::model::{Aggregator, Mode, ModelConfig, SparsityConfig};
use jointslu::optim::{train, AdaDeltaConfig, TrainConfig};
use jointslu_ffi::*;

fn write_model(dir: &Path, aggregator: Aggregator) -> (CString, Checkpoint) {
    let corpus = synth_generate(&SynthSpec::atis_like(5, 120)).unwrap().examples;
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let config = ModelConfig {
        mode: Mode::Joint,
        word_embed_dim: 8,
        tag_embed_dim: 4,
        hidden_dim: 8,
        window_sizes: vec![3],
        filters_per_window: 6,
        aggregator,
        sparsity: (aggregator == Aggregator::Attention).then(SparsityConfig::default),
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs: 1,
        adadelta: AdaDeltaConfig { lr: 1.0, ..Default::default() },
        ..Default::default()
    };
    let out = train(&config, &cfg, &vocab, &corpus, None, None, |_| {}).unwrap();
    let ckpt = Checkpoint::new(out.model, vocab, RunConfig::default());
    let path = dir.join(format!("{aggregator:?}.jslu"));
    save_checkpoint(&ckpt, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), ckpt)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(jslu_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn predict_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ckpt) = write_model(dir.path(), Aggregator::Attention);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { jslu_model_load(path.as_ptr(), &mut model) }, JsluStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(unsafe { jslu_model_num_tags(model) }, ckpt.vocab.num_tags());
    assert_eq!(unsafe { jslu_model_num_intents(model) }, 4);

    let words = ["show", "me", "flights", "from", "boston", "to", "denver", "zzz"];
    let owned: Vec<CString> = words.iter().map(|w| CString::new(*w).unwrap()).collect();
    let ptrs: Vec<*const _> = owned.iter().map(|c| c.as_ptr()).collect();
    let mut pred = ptr::null_mut();
    assert_eq!(unsafe { jslu_predict(model, ptrs.as_ptr(), ptrs.len(), &mut pred) }, JsluStatus::Ok);

    let indices: Vec<usize> = words.iter().map(|w| ckpt.vocab.word_index(w)).collect();
    let expect = ckpt.model.predict(&indices).unwrap();
    assert_eq!(unsafe { jslu_prediction_num_tags(pred) }, words.len());
    for (i, &t) in expect.tags.as_ref().unwrap().iter().enumerate() {
        let got = unsafe { CStr::from_ptr(jslu_prediction_tag(pred, i)) };
        assert_eq!(got.to_str().unwrap(), ckpt.vocab.tag(t));
    }
    assert!(unsafe { jslu_prediction_tag(pred, words.len()) }.is_null());
    let intent = unsafe { CStr::from_ptr(jslu_prediction_intent(pred)) };
    assert_eq!(intent.to_str().unwrap(), ckpt.vocab.intent(expect.intent.unwrap()));

    let mut len = 0;
    let mut small = [0f32; 2];
    let st = unsafe { jslu_prediction_attention(pred, small.as_mut_ptr(), small.len(), &mut len) };
    assert_eq!((st, len), (JsluStatus::InvalidInput, words.len()));
    let mut buf = vec![0f32; len];
    let st = unsafe { jslu_prediction_attention(pred, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(st, JsluStatus::Ok);
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&buf), bits(expect.attention.as_ref().unwrap()));

    unsafe {
        jslu_prediction_free(pred);
        jslu_model_free(model);
    }
}

#[test]
fn errors_are_codes_not_crashes() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.jslu").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { jslu_model_load(missing.as_ptr(), &mut model) }, JsluStatus::Io);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    let junk = dir.path().join("junk.jslu");
    std::fs::write(&junk, b"JSLU\x01\xff\xff").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { jslu_model_load(junk.as_ptr(), &mut model) }, JsluStatus::Corrupt);
    assert_eq!(unsafe { jslu_model_load(ptr::null(), &mut model) }, JsluStatus::NullPointer);
    assert_eq!(unsafe { jslu_model_load(junk.as_ptr(), ptr::null_mut()) }, JsluStatus::NullPointer);

    let (path, _) = write_model(dir.path(), Aggregator::Max);
    assert_eq!(unsafe { jslu_model_load(path.as_ptr(), &mut model) }, JsluStatus::Ok);
    assert!(last_error().is_empty());
    let mut pred = ptr::null_mut();
    let tok = CString::new("boston").unwrap();
    let toks = [tok.as_ptr()];
    assert_eq!(unsafe { jslu_predict(model, toks.as_ptr(), 0, &mut pred) }, JsluStatus::InvalidInput);
    assert_eq!(unsafe { jslu_predict(ptr::null(), toks.as_ptr(), 1, &mut pred) }, JsluStatus::NullPointer);
    let bad = [b"\xff\0".as_ptr().cast()];
    assert_eq!(unsafe { jslu_predict(model, bad.as_ptr(), 1, &mut pred) }, JsluStatus::InvalidUtf8);

    assert_eq!(unsafe { jslu_predict(model, toks.as_ptr(), 1, &mut pred) }, JsluStatus::Ok);
    let mut len = 0;
    let st = unsafe { jslu_prediction_attention(pred, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, JsluStatus::Unsupported);
    unsafe {
        jslu_prediction_free(pred);
        jslu_model_free(model);
        jslu_model_free(ptr::null_mut());
        jslu_prediction_free(ptr::null_mut());
    }
    assert_eq!(unsafe { jslu_model_num_tags(ptr::null()) }, 0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(jslu_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("jointslu.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["jslu_model_load", "jslu_predict", "jslu_prediction_attention", "JSLU_STATUS_CORRUPT"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // syntax-check with the system compiler when there is one
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
