//! Dataset directories built byte by byte, independent of `save_dataset`.

use std::fs;
use std::path::Path;

use serde_json::json;
use tzsl::dataspace::{load_dataset, make_synthetic_tzsl, save_dataset, Preprocessing, SyntheticSpec};
use tzsl::Error;

fn f32_blob(dir: &Path, name: &str, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(name), bytes).unwrap();
}

fn i32_blob(dir: &Path, name: &str, values: &[i32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(name), bytes).unwrap();
}

fn entry(file: &str, dtype: &str, shape: &[usize]) -> serde_json::Value {
    json!({"file": file, "dtype": dtype, "shape": shape})
}

/// 4 seen examples over 2 seen classes, 3 unseen examples over 2 unseen
/// classes, d_v = 3, d_a = 2. `seen_rows` is what the manifest claims.
fn write_small(dir: &Path, seen_rows: usize, seen_features: &[f32]) {
    f32_blob(dir, "sv.f32", seen_features);
    i32_blob(dir, "sl.i32", &[0, 1, 0, 1]);
    f32_blob(dir, "uv.f32", &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    f32_blob(dir, "sa.f32", &[1.0, 0.0, 0.0, 1.0]);
    f32_blob(dir, "ua.f32", &[1.0, 1.0, -1.0, 1.0]);
    i32_blob(dir, "ul.i32", &[0, 1, 1]);
    let manifest = json!({
        "seen_features": entry("sv.f32", "f32", &[seen_rows, 3]),
        "seen_labels": entry("sl.i32", "i32", &[4]),
        "unseen_features": entry("uv.f32", "f32", &[3, 3]),
        "seen_attributes": entry("sa.f32", "f32", &[2, 2]),
        "unseen_attributes": entry("ua.f32", "f32", &[2, 2]),
        "unseen_labels_eval": entry("ul.i32", "i32", &[3]),
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

const SEEN: [f32; 12] = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 4.0];

#[test]
fn well_formed_small_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), 4, &SEEN);
    let ds = load_dataset(dir.path(), &Preprocessing::l2(1.0)).unwrap();
    assert_eq!(ds.num_seen_classes(), 2);
    assert_eq!(ds.num_unseen_classes(), 2);
    assert_eq!(ds.seen_features().rows(), 4);
    assert_eq!(ds.seen_labels(), &[0, 1, 0, 1]);
    assert_eq!(ds.unseen_labels_eval(), Some(&[0, 1, 1][..]));
    // rows are brought to the unit sphere: [0, 2, 0] -> [0, 1, 0]
    assert_eq!(ds.seen_features().row(1).to_vec(), vec![0.0, 1.0, 0.0]);
    let a = ds.unseen_attributes().row(1).to_vec();
    let h = 0.5f64.sqrt();
    assert!((a[0] + h).abs() < 1e-12 && (a[1] - h).abs() < 1e-12);

    let raw = load_dataset(dir.path(), &Preprocessing::raw()).unwrap();
    assert_eq!(raw.seen_features().row(3).to_vec(), vec![0.0, 0.0, 4.0]);
}

#[test]
fn manifest_claiming_more_rows_than_the_blob_holds() {
    let dir = tempfile::tempdir().unwrap();
    // manifest says 10 rows, blob holds 8
    write_small(dir.path(), 10, &[0.5; 24]);
    match load_dataset(dir.path(), &Preprocessing::raw()) {
        Err(Error::ShapeMismatch(msg)) => {
            assert!(msg.contains("seen_features"), "{msg}");
            assert!(msg.contains("120") && msg.contains("96"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn nan_in_a_blob() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = SEEN;
    seen[5] = f32::NAN;
    write_small(dir.path(), 4, &seen);
    match load_dataset(dir.path(), &Preprocessing::raw()) {
        Err(Error::NonFinite(what)) => assert!(what.contains("seen_features"), "{what}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn distinct_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), 4, &SEEN);
    i32_blob(dir.path(), "sl.i32", &[0, 1, 2, 1]);
    assert!(matches!(
        load_dataset(dir.path(), &Preprocessing::raw()),
        Err(Error::LabelOutOfRange { label: 2, num_classes: 2, .. })
    ));

    write_small(dir.path(), 4, &SEEN);
    fs::remove_file(dir.path().join("uv.f32")).unwrap();
    match load_dataset(dir.path(), &Preprocessing::raw()) {
        Err(Error::MissingFile { path }) => assert!(path.ends_with("uv.f32")),
        other => panic!("{other:?}"),
    }

    write_small(dir.path(), 4, &SEEN);
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    fs::write(dir.path().join("manifest.json"), text.replacen('{', r#"{"extra": 1,"#, 1)).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), &Preprocessing::raw()),
        Err(Error::Manifest { .. })
    ));
}

#[test]
fn save_then_load_round_trips_at_f32_precision() {
    let raw = make_synthetic_tzsl(&SyntheticSpec::fixture(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &raw).unwrap();
    let back = load_dataset(dir.path(), &Preprocessing::raw()).unwrap();
    let want = raw.quantized_f32().unwrap();
    assert_eq!(back.seen_features(), want.seen_features());
    assert_eq!(back.unseen_features(), want.unseen_features());
    assert_eq!(back.seen_labels(), raw.seen_labels());
    assert_eq!(back.unseen_labels_eval(), raw.unseen_labels_eval());
    assert_eq!(back.seen_test().unwrap().labels, raw.seen_test().unwrap().labels);
}
