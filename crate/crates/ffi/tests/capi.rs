use std::ffi::{CStr, CString};
use std::ptr;

use scoresync::model::{save_checkpoint, CaModel, ModelConfig};
use scoresync::synth::{generate_corpus, write_corpus, CorpusConfig};
use scoresync_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ss_last_error_message()) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn dtw_and_divergence() {
    let costs = [0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
    let mut path = [0.0; 3];
    let mut cost = -1.0;
    let st = unsafe { ss_dtw_classic(costs.as_ptr(), 3, 3, path.as_mut_ptr(), &mut cost) };
    assert_eq!(st, SsStatus::Ok);
    assert_eq!(path, [0.0, 1.0, 2.0]);
    assert_eq!(cost, 0.0);

    let a = [0.0, 1.0, 2.0];
    let b = [0.0, 2.0];
    let mut v = -1.0;
    let mut g = [0.0; 3];
    assert_eq!(unsafe { ss_softdtw_divergence(a.as_ptr(), 3, a.as_ptr(), 3, 1.0, &mut v, g.as_mut_ptr()) }, SsStatus::Ok);
    assert_eq!(v, 0.0);
    assert_eq!(g, [0.0; 3]);
    assert_eq!(unsafe { ss_softdtw_divergence(a.as_ptr(), 3, b.as_ptr(), 2, 0.5, &mut v, ptr::null_mut()) }, SsStatus::Ok);
    assert!(v > 0.0);
    let st = unsafe { ss_softdtw_divergence(a.as_ptr(), 3, b.as_ptr(), 2, 0.0, &mut v, g.as_mut_ptr()) };
    assert_eq!(st, SsStatus::InvalidArgument);
    assert!(last_error().contains("differentiable"), "{}", last_error());
}

#[test]
fn accuracy_matches_hand_example() {
    let gt = [0.0, 1.0, 2.0, 3.0];
    let pred = [0.04, 1.2, 2.0, 3.3];
    let margins = [0.05, 0.1, 0.2];
    let mut out = [0.0; 3];
    let st = unsafe { ss_alignment_accuracy(pred.as_ptr(), gt.as_ptr(), 4, 1.0, margins.as_ptr(), 3, out.as_mut_ptr()) };
    assert_eq!(st, SsStatus::Ok);
    assert_eq!(out, [50.0, 50.0, 75.0]);
    let st = unsafe { ss_alignment_accuracy(pred.as_ptr(), gt.as_ptr(), 4, 1.0, margins.as_ptr(), 0, out.as_mut_ptr()) };
    assert_eq!(st, SsStatus::InvalidArgument);
}

#[test]
fn null_pointers_are_reported() {
    let mut cost = 0.0;
    let st = unsafe { ss_dtw_classic(ptr::null(), 2, 2, ptr::null_mut(), &mut cost) };
    assert_eq!(st, SsStatus::NullPointer);
    assert!(last_error().contains("costs"));
    assert_eq!(unsafe { ss_model_load(ptr::null(), ptr::null_mut()) }, SsStatus::NullPointer);
    let mut n = 0usize;
    assert_eq!(unsafe { ss_corpus_len(ptr::null(), &mut n) }, SsStatus::NullPointer);
    unsafe {
        ss_model_free(ptr::null_mut());
        ss_corpus_free(ptr::null_mut());
    }
}

#[test]
fn model_and_corpus_handles() {
    let tmp = tempfile::tempdir().unwrap();
    let cdir = tmp.path().join("corpus");
    let corpus = generate_corpus(&CorpusConfig { pieces: 3, ..CorpusConfig::default() }).unwrap();
    write_corpus(&cdir, &corpus).unwrap();
    let mdir = tmp.path().join("ckpt");
    let model = CaModel::new(ModelConfig::default()).unwrap();
    save_checkpoint(&mdir, &model).unwrap();

    let mut c: *mut SsCorpus = ptr::null_mut();
    assert_eq!(unsafe { ss_corpus_open(cstr(&cdir).as_ptr(), &mut c) }, SsStatus::Ok);
    let mut m: *mut SsModel = ptr::null_mut();
    assert_eq!(unsafe { ss_model_load(cstr(&mdir).as_ptr(), &mut m) }, SsStatus::Ok);
    let mut grid = 0usize;
    assert_eq!(unsafe { ss_model_grid_len(m, &mut grid) }, SsStatus::Ok);
    assert_eq!(grid, 64);

    let mut n = 0usize;
    assert_eq!(unsafe { ss_corpus_len(c, &mut n) }, SsStatus::Ok);
    assert_eq!(n, 3);
    for i in 0..n {
        let (mut p, mut q) = (0usize, 0usize);
        assert_eq!(unsafe { ss_corpus_pair_shape(c, i, &mut p, &mut q) }, SsStatus::Ok);
        let mut sim = vec![0.0; p * q];
        let mut gt = vec![0.0; p];
        assert_eq!(unsafe { ss_corpus_pair_data(c, i, sim.as_mut_ptr(), gt.as_mut_ptr()) }, SsStatus::Ok);
        assert_eq!(sim, corpus.pairs[i].similarity.data());
        assert_eq!(gt, corpus.pairs[i].gt_path.y_indices);
        let mut path = vec![-1.0; p];
        assert_eq!(unsafe { ss_align(m, sim.as_ptr(), p, q, path.as_mut_ptr()) }, SsStatus::Ok);
        assert_eq!(path, model.predict_alignment(&corpus.pairs[i]).unwrap().y_indices);
    }
    let (mut p, mut q) = (0usize, 0usize);
    assert_eq!(unsafe { ss_corpus_pair_shape(c, 99, &mut p, &mut q) }, SsStatus::InvalidArgument);

    let sim = vec![0.5; 300 * 10];
    let mut path = vec![0.0; 300];
    assert_eq!(unsafe { ss_align(m, sim.as_ptr(), 300, 10, path.as_mut_ptr()) }, SsStatus::InvalidArgument);
    assert!(last_error().contains("too long"));
    unsafe {
        ss_model_free(m);
        ss_corpus_free(c);
    }

    let mut bad: *mut SsModel = ptr::null_mut();
    let st = unsafe { ss_model_load(cstr(&tmp.path().join("none")).as_ptr(), &mut bad) };
    assert_eq!(st, SsStatus::Io);
    assert!(bad.is_null());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scoresync.h")).unwrap();
    for name in [
        "ss_model_load",
        "ss_model_free",
        "ss_align",
        "ss_dtw_classic",
        "ss_softdtw_divergence",
        "ss_corpus_open",
        "ss_corpus_len",
        "ss_corpus_free",
        "ss_alignment_accuracy",
        "ss_last_error_message",
        "SS_STATUS_OK = 0",
        "typedef struct SsModel SsModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
