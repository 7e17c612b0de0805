use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use pcreal::*;

fn last_message() -> String {
    let p = pcreal_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn score_generated_cloud_through_handles() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(pcreal_model_new(3, &mut model), PcrealStatus::Ok);
        assert!(pcreal_model_parameter_count(model) > 0);

        let mut cloud = ptr::null_mut();
        assert_eq!(pcreal_cloud_generate(0, 7, 0, &mut cloud), PcrealStatus::Ok);
        let n = pcreal_cloud_len(cloud);
        assert!(n > 0);

        let mut scores = ptr::null_mut();
        assert_eq!(pcreal_score(model, cloud, &mut scores), PcrealStatus::Ok);
        let mut scene = [0.0f64; 3];
        assert_eq!(pcreal_scores_scene(scores, scene.as_mut_ptr()), PcrealStatus::Ok);
        assert!((scene.iter().sum::<f64>() - 1.0).abs() < 1e-6);

        let q = pcreal_scores_query_count(scores);
        let mut probs = vec![0.0; 3 * q];
        assert_eq!(
            pcreal_scores_probs(scores, probs.as_mut_ptr(), q),
            PcrealStatus::Ok
        );
        for row in probs.chunks_exact(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(
            pcreal_scores_queries(scores, probs.as_mut_ptr(), q - 1),
            PcrealStatus::BufferTooSmall
        );

        let mut map = vec![0.0; 3 * n];
        assert_eq!(
            pcreal_anomaly_map(scores, cloud, map.as_mut_ptr(), n),
            PcrealStatus::Ok
        );

        let mut json = ptr::null_mut();
        assert_eq!(pcreal_scores_to_json(scores, &mut json), PcrealStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        assert!(text.contains("\"scene\""));
        pcreal_string_free(json);

        pcreal_scores_free(scores);
        pcreal_cloud_free(cloud);
        pcreal_model_free(model);
    }
}

#[test]
fn checkpoint_round_trip_gives_same_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let xyz: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64) * 0.3 - 15.0).collect();
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(pcreal_model_new(11, &mut a), PcrealStatus::Ok);
        assert_eq!(pcreal_model_save(a, path.as_ptr()), PcrealStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(pcreal_model_load(path.as_ptr(), &mut b), PcrealStatus::Ok);

        let mut cloud = ptr::null_mut();
        assert_eq!(
            pcreal_cloud_from_xyz(xyz.as_ptr(), 100, &mut cloud),
            PcrealStatus::Ok
        );
        let mut back = vec![0.0; 300];
        assert_eq!(
            pcreal_cloud_points(cloud, back.as_mut_ptr(), 100),
            PcrealStatus::Ok
        );
        assert_eq!(back, xyz);

        let mut scene = [[0.0f64; 3]; 2];
        for (m, out) in [a, b].into_iter().zip(scene.iter_mut()) {
            let mut s = ptr::null_mut();
            assert_eq!(pcreal_score(m, cloud, &mut s), PcrealStatus::Ok);
            assert_eq!(pcreal_scores_scene(s, out.as_mut_ptr()), PcrealStatus::Ok);
            pcreal_scores_free(s);
        }
        assert_eq!(scene[0], scene[1]);
        pcreal_cloud_free(cloud);
        pcreal_model_free(a);
        pcreal_model_free(b);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/dir/m.ckpt").unwrap();
        assert_eq!(pcreal_model_load(missing.as_ptr(), &mut model), PcrealStatus::Io);
        assert!(model.is_null());
        assert!(!last_message().is_empty());

        assert_eq!(
            pcreal_model_load(ptr::null(), &mut model),
            PcrealStatus::NullPointer
        );
        assert!(last_message().contains("path"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.xyz");
        std::fs::write(&bad, "1 2 3\n4 5 oops\n").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        let mut cloud = ptr::null_mut();
        assert_eq!(
            pcreal_cloud_load(bad.as_ptr(), &mut cloud),
            PcrealStatus::Malformed
        );
        assert_eq!(pcreal_last_error_offset(), 6);

        let mut empty = ptr::null_mut();
        assert_eq!(
            pcreal_cloud_from_xyz(ptr::null(), 0, &mut empty),
            PcrealStatus::Ok
        );
        assert_eq!(pcreal_model_new(0, &mut model), PcrealStatus::Ok);
        let mut scores = ptr::null_mut();
        assert_ne!(pcreal_score(model, empty, &mut scores), PcrealStatus::Ok);
        assert!(scores.is_null());

        // A successful call clears the previous error.
        assert_eq!(pcreal_cloud_len(empty), 0);
        let mut other = ptr::null_mut();
        assert_eq!(pcreal_cloud_generate(1, 0, 0, &mut other), PcrealStatus::Ok);
        assert!(pcreal_last_error_message().is_null());
        assert_eq!(pcreal_last_error_offset(), -1);

        assert_eq!(
            pcreal_cloud_generate(99, 0, 0, &mut cloud),
            PcrealStatus::InvalidArgument
        );

        pcreal_cloud_free(other);
        pcreal_cloud_free(empty);
        pcreal_model_free(model);
        pcreal_model_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/pcreal.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ PcrealModel *m = 0; return pcreal_model_new(1, &m) == PCREAL_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc)
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping header check, {cc} unavailable: {e}"),
    }
}
