use std::collections::BTreeMap;
use std::path::Path;

use brtdown::raster::Raster;
use brtdown::scene_io::{load_scene, persisted_layers, scene_from_layers, write_scene, SceneMeta, MANIFEST_FILE};
use brtdown::synth::{build_scene, Scene, SceneConfig};
use brtdown::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn small() -> SceneConfig {
    SceneConfig {
        years: 1,
        extent_km: 20.0,
        n_fields: 8,
        ..SceneConfig::default()
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// The part of a generated scene that survives a write/load cycle.
fn persisted_view(s: &Scene) -> Scene {
    let mut s = s.clone();
    s.fine = None;
    for d in &mut s.days {
        d.truth = None;
    }
    s
}

#[test]
fn round_trip_preserves_scene() {
    let scene = build_scene(&small()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_scene(&scene, tmp.path()).unwrap();
    assert_eq!(manifest["SM"]["1000"].len(), 365);
    assert_eq!(manifest["SM"]["10000"].len(), 122);
    assert!(manifest["LC"]["200"].contains_key("1"));

    let back = load_scene(tmp.path()).unwrap();
    assert_eq!(back, persisted_view(&scene));
    // the manifest file itself is an accepted path too
    let again = load_scene(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(again, back);
}

#[test]
fn layer_order_does_not_matter() {
    let scene = build_scene(&small()).unwrap();
    let meta = SceneMeta::of(&scene);
    let layers: Vec<Raster> = persisted_layers(&scene).into_iter().cloned().collect();
    let ordered = scene_from_layers(&meta, layers.clone()).unwrap();
    for seed in 0..3 {
        let mut shuffled = layers.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(scene_from_layers(&meta, shuffled).unwrap(), ordered);
    }
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_scene(&build_scene(&small()).unwrap(), a.path()).unwrap();
    write_scene(&build_scene(&small()).unwrap(), b.path()).unwrap();
    let other = SceneConfig { seed: 8, ..small() };
    write_scene(&build_scene(&other).unwrap(), c.path()).unwrap();
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn manifest_key_mismatch_is_parse_error() {
    let scene = build_scene(&small()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = write_scene(&scene, tmp.path()).unwrap();
    let lst = manifest["LST"]["1000"]["5"].clone();
    manifest.get_mut("SM").unwrap().get_mut("1000").unwrap().insert("5".into(), lst);
    std::fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
    let err = load_scene(tmp.path()).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn missing_layer_is_data_error() {
    let scene = build_scene(&small()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = write_scene(&scene, tmp.path()).unwrap();
    manifest.get_mut("PPT").unwrap().get_mut("1000").unwrap().remove("40");
    std::fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
    let err = load_scene(tmp.path()).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn missing_manifest_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_scene(tmp.path()).unwrap_err();
    assert!(err.to_string().contains(MANIFEST_FILE), "{err}");
}
