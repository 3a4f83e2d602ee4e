use std::ffi::{CStr, CString};
use std::ptr;

use pointseq::data::{gen_shape, save_xyz, ShapeFamily};
use pointseq::nn::{checkpoint, prepare, Model, ModelConfig};
use pointseq::oracle;
use pointseq_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ps_last_error()) }.to_string_lossy().into_owned()
}

fn sphere(n: usize) -> Vec<f64> {
    let cloud = gen_shape(&ShapeFamily::Sphere.canonical(), n, 3).unwrap();
    cloud.points().iter().flat_map(|p| p.to_array()).collect()
}

fn new_cloud(xyz: &[f64]) -> *mut PsCloud {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { ps_cloud_new(xyz.as_ptr(), xyz.len() / 3, &mut c) }, PsStatus::Ok);
    c
}

#[test]
fn cloud_round_trip() {
    let xyz = sphere(64);
    let c = new_cloud(&xyz);
    unsafe {
        assert_eq!(ps_cloud_len(c), 64);
        let mut back = vec![0.0; 192];
        assert_eq!(ps_cloud_points(c, back.as_mut_ptr(), back.len()), PsStatus::Ok);
        assert_eq!(back, xyz);
        assert_eq!(ps_cloud_points(c, back.as_mut_ptr(), 10), PsStatus::BufferTooSmall);
        assert!(last_error().contains("192"));
        ps_cloud_free(c);
    }
}

#[test]
fn fps_matches_the_oracle() {
    let xyz = sphere(200);
    let c = new_cloud(&xyz);
    let mut idx = vec![0usize; 16];
    unsafe {
        assert_eq!(ps_fps(c, 16, idx.as_mut_ptr()), PsStatus::Ok);
        ps_cloud_free(c);
    }
    let pts: Vec<_> = xyz.chunks(3).map(|c| [c[0], c[1], c[2]].into()).collect();
    assert_eq!(idx, oracle::fps_brute(&pts, 16, 0));
}

#[test]
fn reorder_is_a_permutation_and_replays() {
    let xyz = sphere(40);
    let n = 40;
    let mut order = vec![0usize; n];
    let st = unsafe { ps_reorder(xyz.as_ptr(), n, PsOrdering::Nimba, 0.8, order.as_mut_ptr(), order.len()) };
    assert_eq!(st, PsStatus::Ok);
    let pts: Vec<_> = xyz.chunks(3).map(|c| [c[0], c[1], c[2]].into()).collect();
    assert_eq!(order, oracle::nimba_replay(&pts, 0.8));

    assert_eq!(ps_ordering_len(PsOrdering::AxisTriple, n), 3 * n);
    let mut small = vec![0usize; n];
    let st = unsafe { ps_reorder(xyz.as_ptr(), n, PsOrdering::AxisTriple, 0.8, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, PsStatus::BufferTooSmall);
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(ps_cloud_new(ptr::null(), 3, &mut c), PsStatus::NullPointer);
        assert!(last_error().contains("xyz"));
        assert_eq!(ps_cloud_new([0.0; 3].as_ptr(), 0, &mut c), PsStatus::EmptyInput);
        assert_eq!(ps_cloud_new([0.0, f64::NAN, 0.0].as_ptr(), 1, &mut c), PsStatus::NonFinite);
        assert!(c.is_null());

        let xyz = sphere(8);
        let mut order = [0usize; 8];
        assert_eq!(
            ps_reorder(xyz.as_ptr(), 8, PsOrdering::Nimba, -1.0, order.as_mut_ptr(), 8),
            PsStatus::InvalidArgument
        );

        let missing = CString::new("/nonexistent/cloud.xyz").unwrap();
        assert_eq!(ps_cloud_load_xyz(missing.as_ptr(), &mut c), PsStatus::Io);
        assert!(!last_error().is_empty());

        let cloud = new_cloud(&xyz);
        assert!(last_error().is_empty());
        let mut idx = [0usize; 16];
        assert_eq!(ps_fps(cloud, 16, idx.as_mut_ptr()), PsStatus::InvalidArgument);
        ps_cloud_free(cloud);
        ps_cloud_free(ptr::null_mut());
        ps_model_free(ptr::null_mut());
        assert_eq!(ps_cloud_len(ptr::null()), 0);
    }
}

#[test]
fn load_xyz_and_normalize() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.xyz");
    let cloud = gen_shape(&ShapeFamily::Cube.canonical(), 100, 1).unwrap();
    let shifted = cloud.map_points(|p| p * 3.0 + [1.0, 2.0, 3.0].into()).unwrap();
    save_xyz(&path, &shifted).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(ps_cloud_load_xyz(cpath.as_ptr(), &mut c), PsStatus::Ok);
        assert_eq!(ps_cloud_normalize(c), PsStatus::Ok);
        let mut pts = vec![0.0; 300];
        ps_cloud_points(c, pts.as_mut_ptr(), 300);
        let max = pts.chunks(3).map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        ps_cloud_free(c);
    }
}

#[test]
fn classify_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.ckpt");
    let model = Model::new(ModelConfig::toy(), 5).unwrap();
    checkpoint::save(&model, &path).unwrap();
    let cloud = gen_shape(&ShapeFamily::Torus.canonical(), model.config.n_points, 2).unwrap();
    let expected = model.logits(&[&prepare(&cloud, &model.config, 0, 0).unwrap()]).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let xyz: Vec<f64> = cloud.points().iter().flat_map(|p| p.to_array()).collect();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ps_model_load(cpath.as_ptr(), &mut m), PsStatus::Ok);
        assert_eq!(ps_model_num_classes(m), 2);
        assert_eq!(ps_model_num_points(m), model.config.n_points);
        let c = new_cloud(&xyz);
        let mut label = usize::MAX;
        let mut logits = [0.0; 2];
        assert_eq!(ps_model_classify(m, c, &mut label, logits.as_mut_ptr(), 2), PsStatus::Ok);
        assert_eq!(logits.to_vec(), expected.row(0).to_vec());
        assert_eq!(label, if logits[1] > logits[0] { 1 } else { 0 });
        assert_eq!(ps_model_classify(m, c, &mut label, logits.as_mut_ptr(), 1), PsStatus::BufferTooSmall);
        assert_eq!(ps_model_classify(m, c, &mut label, ptr::null_mut(), 0), PsStatus::Ok);
        ps_cloud_free(c);
        ps_model_free(m);
    }

    std::fs::write(&path, b"not a checkpoint").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ps_model_load(cpath.as_ptr(), &mut m) }, PsStatus::Parse);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ps_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pointseq.h")).unwrap();
    for name in [
        "ps_cloud_new",
        "ps_cloud_load_xyz",
        "ps_cloud_free",
        "ps_fps",
        "ps_reorder",
        "ps_model_load",
        "ps_model_classify",
        "ps_last_error",
        "typedef struct PsCloud PsCloud",
        "PS_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles a small C program against the header when a C compiler exists.
#[test]
fn header_compiles_as_c99() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"pointseq.h\"\n\
         int main(void) {\n\
           double xyz[6] = {0, 0, 0, 1, 0, 0};\n\
           PsCloud *c = 0;\n\
           size_t idx[2];\n\
           if (ps_cloud_new(xyz, 2, &c) != PS_STATUS_OK) return 1;\n\
           PsStatus s = ps_fps(c, 2, idx);\n\
           ps_cloud_free(c);\n\
           return s == PS_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Wextra", "-Werror", "-I", include])
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => return,
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
