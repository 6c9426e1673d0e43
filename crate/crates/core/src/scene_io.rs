//! On-disk scenes: TDR-CSV rasters, a manifest mapping
//! variable → resolution → day → relative path, and a metadata sidecar.
//!
//! Persisted layers are the ones the downscaler reads: daily 1 km truth SM,
//! daily noisy 1 km LST and PPT, noisy 1 km LAI on observation days, noisy
//! 10 km SM on observation days, and land cover at 1 km and 200 m on the
//! days it changes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_tdr, write_tdr, Raster, Variable};
use crate::synth::{DayLayers, Scene, SceneGeometry, SoilParams, COARSE_RES_M, FINE_RES_M, MID_RES_M};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "scene_meta.json";
const RASTER_DIR: &str = "rasters";

/// variable → resolution (m) → day → relative path.
pub type Manifest = BTreeMap<String, BTreeMap<String, BTreeMap<String, String>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub geometry: SceneGeometry,
    pub n_days: u32,
    pub soil: SoilParams,
    pub rain_event_count: usize,
}

impl SceneMeta {
    pub fn of(scene: &Scene) -> Self {
        SceneMeta {
            geometry: scene.geometry,
            n_days: scene.n_days,
            soil: scene.soil,
            rain_event_count: scene.rain_event_count,
        }
    }
}

/// Layers written for `scene`, in a fixed order.
pub fn persisted_layers(scene: &Scene) -> Vec<&Raster> {
    let mut out = Vec::new();
    let mut last_lc: Option<&Raster> = None;
    for d in &scene.days {
        out.push(&d.sm_truth);
        out.push(&d.lst);
        out.push(&d.ppt);
        out.extend(d.lai.as_ref());
        out.extend(d.coarse_sm.as_ref());
        if last_lc.is_none_or(|l| l.values() != d.lc.values()) {
            out.push(&d.lc);
            last_lc = Some(&d.lc);
        }
    }
    out.extend(scene.lc_fine.iter());
    out
}

fn raster_path(r: &Raster) -> String {
    format!("{RASTER_DIR}/{}_{}_{:04}.csv", r.variable, r.resolution_m, r.day)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes the scene under `dir` and returns the manifest.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<Manifest> {
    let rdir = dir.join(RASTER_DIR);
    std::fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
    let mut manifest = Manifest::new();
    for r in persisted_layers(scene) {
        let rel = raster_path(r);
        write_tdr(r, &dir.join(&rel))?;
        manifest
            .entry(r.variable.to_string())
            .or_default()
            .entry(r.resolution_m.to_string())
            .or_default()
            .insert(r.day.to_string(), rel);
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(META_FILE), &SceneMeta::of(scene))?;
    Ok(manifest)
}

/// Loads a scene written by [`write_scene`]. `path` is the scene directory
/// or its manifest file.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let manifest: Manifest = read_json(&manifest_path)?;
    let meta: SceneMeta = read_json(&dir.join(META_FILE))?;
    let mut rasters = Vec::new();
    for (var, by_res) in &manifest {
        for (res, by_day) in by_res {
            for (day, rel) in by_day {
                let p = dir.join(rel);
                let r = read_tdr(&p)?;
                if r.variable.to_string() != *var
                    || r.resolution_m.to_string() != *res
                    || r.day.to_string() != *day
                {
                    return Err(Error::Parse {
                        path: p,
                        msg: format!("header does not match manifest key {var}/{res}/{day}"),
                    });
                }
                rasters.push(r);
            }
        }
    }
    scene_from_layers(&meta, rasters)
}

/// Rebuilds a scene from persisted layers given in any order.
pub fn scene_from_layers(meta: &SceneMeta, rasters: Vec<Raster>) -> Result<Scene> {
    let n = meta.n_days as usize;
    let mut slots: BTreeMap<(Variable, u32), Vec<Option<Raster>>> = BTreeMap::new();
    for r in rasters {
        if r.day < 1 || r.day as usize > n {
            return Err(Error::Data(format!("{} raster for day {} outside the scene", r.variable, r.day)));
        }
        let expect = match r.resolution_m {
            FINE_RES_M => meta.geometry.fine.size(),
            MID_RES_M => meta.geometry.mid.size(),
            COARSE_RES_M => meta.geometry.coarse.size(),
            other => return Err(Error::Data(format!("unexpected resolution {other} m"))),
        };
        if r.width != expect || r.height != expect {
            return Err(Error::Dimension(format!(
                "{} raster at {} m is {}x{}, expected {expect}x{expect}",
                r.variable, r.resolution_m, r.height, r.width
            )));
        }
        let v = slots.entry((r.variable, r.resolution_m)).or_insert_with(|| vec![None; n]);
        let i = r.day as usize - 1;
        v[i] = Some(r);
    }
    let mut take = |var: Variable, res: u32| slots.remove(&(var, res)).unwrap_or_else(|| vec![None; n]);
    let sm = take(Variable::SM, MID_RES_M);
    let lst = take(Variable::LST, MID_RES_M);
    let ppt = take(Variable::PPT, MID_RES_M);
    let lai = take(Variable::LAI, MID_RES_M);
    let coarse = take(Variable::SM, COARSE_RES_M);
    let lc_mid = take(Variable::LC, MID_RES_M);
    let lc_fine: Vec<Raster> = take(Variable::LC, FINE_RES_M).into_iter().flatten().collect();

    let missing = |var: &str, day: usize| Error::Data(format!("scene has no {var} raster for day {}", day + 1));
    let mut days = Vec::with_capacity(n);
    let mut current_lc: Option<Raster> = None;
    for (i, ((((s, l), p), a), c)) in sm.into_iter().zip(lst).zip(ppt).zip(lai).zip(coarse).enumerate() {
        if let Some(lc) = &lc_mid[i] {
            current_lc = Some(lc.clone());
        }
        let mut lc = current_lc.clone().ok_or_else(|| missing("1 km LC", i))?;
        lc.day = i as u32 + 1;
        days.push(DayLayers {
            day: i as u32 + 1,
            sm_truth: s.ok_or_else(|| missing("1 km SM", i))?,
            lst: l.ok_or_else(|| missing("LST", i))?,
            ppt: p.ok_or_else(|| missing("PPT", i))?,
            lai: a,
            lc,
            coarse_sm: c,
            truth: None,
        });
    }
    if lc_fine.first().is_none_or(|r| r.day != 1) {
        return Err(Error::Data("scene has no 200 m LC raster for day 1".into()));
    }
    Ok(Scene {
        geometry: meta.geometry,
        n_days: meta.n_days,
        days,
        lc_fine,
        fine: None,
        rain_event_count: meta.rain_event_count,
        soil: meta.soil,
    })
}
