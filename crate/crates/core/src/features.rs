//! Feature-matrix assembly: spatial rows, lagged spatio-temporal rows and
//! LST gap masks.

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::raster::Raster;
use crate::seed;
use crate::synth::Scene;

pub const DEFAULT_LAG: u32 = 7;
pub const DEFAULT_HISTORY_DAYS: u32 = 365;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Spatial,
    Spatiotemporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    LST,
    LAI,
    PPT,
    LC,
    SM10,
    X,
    Y,
}

/// One feature column: a source variable and, for lagged inputs, its lag in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub source: Source,
    pub lag: Option<u32>,
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.source {
            Source::LST => "LST",
            Source::LAI => "LAI",
            Source::PPT => "PPT",
            Source::LC => "LC",
            Source::SM10 => "SM10",
            Source::X => "X",
            Source::Y => "Y",
        };
        match self.lag {
            Some(0) => write!(f, "{name}_t"),
            Some(l) => write!(f, "{name}_t-{l}"),
            None => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSchema {
    pub mode: Mode,
    pub d1: u32,
    pub d2: u32,
    pub d3: u32,
    pub include_lc: bool,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema::spatiotemporal(DEFAULT_LAG, DEFAULT_LAG, DEFAULT_LAG)
    }
}

impl FeatureSchema {
    pub fn spatial() -> Self {
        FeatureSchema {
            mode: Mode::Spatial,
            d1: 0,
            d2: 0,
            d3: 0,
            include_lc: true,
        }
    }

    pub fn spatiotemporal(d1: u32, d2: u32, d3: u32) -> Self {
        FeatureSchema {
            mode: Mode::Spatiotemporal,
            d1,
            d2,
            d3,
            include_lc: true,
        }
    }

    pub fn with_lc(self, include_lc: bool) -> Self {
        FeatureSchema { include_lc, ..self }
    }

    /// Longest lag window; spatial rows look at day t only.
    pub fn max_lag(&self) -> u32 {
        match self.mode {
            Mode::Spatial => 0,
            Mode::Spatiotemporal => self.d1.max(self.d2).max(self.d3),
        }
    }

    fn lst_lags(&self) -> u32 {
        match self.mode {
            Mode::Spatial => 0,
            Mode::Spatiotemporal => self.d1,
        }
    }

    fn check_mask(&self, mask: Option<&GapMask>) -> Result<()> {
        match mask {
            Some(m) if m.available.len() != self.lst_lags() as usize + 1 => Err(Error::Schema(format!(
                "gap mask covers {} LST days, schema has {}",
                m.available.len(),
                self.lst_lags() + 1
            ))),
            _ => Ok(()),
        }
    }

    /// Ordered column descriptors; masked LST lags are left out.
    ///
    /// Spatial: LST, PPT, LAI, [LC], SM10, X, Y.
    /// Spatio-temporal: LST t-D1..t, LAI t-D2..t, PPT t-D3..t, SM10, X, Y, [LC].
    pub fn columns(&self, mask: Option<&GapMask>) -> Result<Vec<Column>> {
        self.check_mask(mask)?;
        let keep = |lag: u32| mask.is_none_or(|m| m.available[lag as usize]);
        let plain = |source| Column { source, lag: None };
        let mut cols = Vec::new();
        match self.mode {
            Mode::Spatial => {
                if keep(0) {
                    cols.push(plain(Source::LST));
                }
                cols.push(plain(Source::PPT));
                cols.push(plain(Source::LAI));
                if self.include_lc {
                    cols.push(plain(Source::LC));
                }
                cols.extend([plain(Source::SM10), plain(Source::X), plain(Source::Y)]);
            }
            Mode::Spatiotemporal => {
                let lags = |source, d: u32, cols: &mut Vec<Column>, masked: bool| {
                    for lag in (0..=d).rev() {
                        if !masked || keep(lag) {
                            cols.push(Column {
                                source,
                                lag: Some(lag),
                            });
                        }
                    }
                };
                lags(Source::LST, self.d1, &mut cols, true);
                lags(Source::LAI, self.d2, &mut cols, false);
                lags(Source::PPT, self.d3, &mut cols, false);
                cols.extend([plain(Source::SM10), plain(Source::X), plain(Source::Y)]);
                if self.include_lc {
                    cols.push(plain(Source::LC));
                }
            }
        }
        Ok(cols)
    }

    pub fn column_names(&self, mask: Option<&GapMask>) -> Result<Vec<String>> {
        Ok(self.columns(mask)?.iter().map(|c| c.to_string()).collect())
    }
}

/// LST availability per lag (index 0 = day t); `false` withholds that day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapMask {
    pub available: Vec<bool>,
}

impl GapMask {
    pub fn identity(d1: u32) -> Self {
        GapMask {
            available: vec![true; d1 as usize + 1],
        }
    }

    /// LST withheld on the `gaps` most recent days t, t-1, …, t-gaps+1.
    pub fn consecutive(d1: u32, gaps: u32) -> Result<Self> {
        if gaps > d1 + 1 {
            return Err(Error::Argument(format!(
                "{gaps} gaps exceed the {} LST days in the window",
                d1 + 1
            )));
        }
        let mut m = GapMask::identity(d1);
        for a in &mut m.available[..gaps as usize] {
            *a = false;
        }
        Ok(m)
    }

    pub fn n_withheld(&self) -> usize {
        self.available.iter().filter(|a| !**a).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Brt750,
    Brt30,
    Brtst,
}

impl Scenario {
    pub fn n_pixels(self) -> usize {
        match self {
            Scenario::Brt750 => 750,
            Scenario::Brt30 | Scenario::Brtst => 30,
        }
    }

    pub fn history_days(self) -> u32 {
        match self {
            Scenario::Brt750 | Scenario::Brt30 => 0,
            Scenario::Brtst => DEFAULT_HISTORY_DAYS,
        }
    }

    pub fn default_schema(self) -> FeatureSchema {
        match self {
            Scenario::Brt750 | Scenario::Brt30 => FeatureSchema::spatial(),
            Scenario::Brtst => FeatureSchema::default(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Brt750 => "brt750",
            Scenario::Brt30 => "brt30",
            Scenario::Brtst => "brtst",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brt750" => Ok(Scenario::Brt750),
            "brt30" => Ok(Scenario::Brt30),
            "brtst" => Ok(Scenario::Brtst),
            _ => Err(Error::Argument(format!("unknown scenario {s:?}"))),
        }
    }
}

/// In-situ pixels (row-major 1 km indices, ascending) and the history window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSelection {
    pub scenario: Scenario,
    pub pixels: Vec<usize>,
    pub history_days: u32,
}

impl TrainingSelection {
    /// Pixels drawn uniformly without replacement from `grid_pixels`.
    pub fn random(scenario: Scenario, grid_pixels: usize, master_seed: u64) -> Result<Self> {
        let n = scenario.n_pixels();
        if n > grid_pixels {
            return Err(Error::Config(format!(
                "{scenario} needs {n} pixels, grid has {grid_pixels}"
            )));
        }
        let mut rng = seed::rng(seed::derive(master_seed, "selection", n as u64));
        let mut pixels = index::sample(&mut rng, grid_pixels, n).into_vec();
        pixels.sort_unstable();
        Ok(TrainingSelection {
            scenario,
            pixels,
            history_days: scenario.history_days(),
        })
    }

    pub fn validate(&self, grid_pixels: usize) -> Result<()> {
        if self.pixels.is_empty() {
            return Err(Error::Config("training selection is empty".into()));
        }
        if self.pixels.iter().any(|&p| p >= grid_pixels) {
            return Err(Error::Config("training pixel outside the grid".into()));
        }
        if self.pixels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("training pixels must be distinct and ascending".into()));
        }
        Ok(())
    }
}

/// Daily series from sparse `(day, value)` observations: each day takes the
/// latest observation on or before it, earlier days the first observation.
pub fn forward_fill_lai(observations: &[(u32, f64)], n_days: u32) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(Error::Argument("no LAI observations to fill from".into()));
    }
    if observations.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Argument("observation days must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(n_days as usize);
    let mut k = 0;
    for day in 1..=n_days {
        while k + 1 < observations.len() && observations[k + 1].0 <= day {
            k += 1;
        }
        out.push(observations[k].1);
    }
    Ok(out)
}

/// Read-only view of a scene for row assembly on one target day. Nothing
/// from a day after `t` is reachable through it.
struct DayView<'a> {
    scene: &'a Scene,
    t: u32,
    size: usize,
    coarse_factor: usize,
}

impl<'a> DayView<'a> {
    fn new(scene: &'a Scene, t: u32) -> Result<Self> {
        scene.day(t)?;
        Ok(DayView {
            scene,
            t,
            size: scene.mid_size(),
            coarse_factor: scene.geometry.mid_per_coarse(),
        })
    }

    fn day(&self, d: u32) -> Result<&'a crate::synth::DayLayers> {
        if d > self.t {
            return Err(Error::Availability(format!("day {d} is after the target day {}", self.t)));
        }
        self.scene.day(d)
    }

    fn lai(&self, d: u32) -> Result<&'a Raster> {
        let mut k = self.day(d)?.day;
        loop {
            if let Some(r) = &self.scene.day(k)?.lai {
                return Ok(r);
            }
            if k == 1 {
                break;
            }
            k -= 1;
        }
        // before the first observation: fall back to the first one, if it is not in the future
        (d..=self.t)
            .find_map(|k| self.scene.days[(k - 1) as usize].lai.as_ref())
            .ok_or_else(|| Error::Availability(format!("no LAI observation on or before day {}", self.t)))
    }

    fn coarse(&self, d: u32, pixel: usize) -> Result<f64> {
        let c = self.day(d)?.coarse_sm.as_ref().ok_or_else(|| {
            Error::Availability(format!("coarse SM not available on day {d}"))
        })?;
        let (r, col) = (pixel / self.size, pixel % self.size);
        Ok(c.get(r / self.coarse_factor, col / self.coarse_factor))
    }

    fn xy(&self, pixel: usize) -> Result<(f64, f64)> {
        self.scene
            .geometry
            .mid
            .pixel_centroid(pixel / self.size, pixel % self.size)
    }

    /// Row for `pixel` on day `d <= t`.
    fn row(&self, pixel: usize, d: u32, columns: &[Column], out: &mut Vec<f64>) -> Result<()> {
        if pixel >= self.size * self.size {
            return Err(Error::Index {
                row: pixel / self.size,
                col: pixel % self.size,
                height: self.size,
                width: self.size,
            });
        }
        let lagged = |lag: Option<u32>| -> Result<u32> {
            let lag = lag.unwrap_or(0);
            if lag >= d {
                return Err(Error::Availability(format!(
                    "lag {lag} reaches before the first day from day {d}"
                )));
            }
            Ok(d - lag)
        };
        let (x, y) = self.xy(pixel)?;
        for c in columns {
            let v = match c.source {
                Source::LST => self.day(lagged(c.lag)?)?.lst.values()[pixel],
                Source::PPT => self.day(lagged(c.lag)?)?.ppt.values()[pixel],
                Source::LAI => self.lai(lagged(c.lag)?)?.values()[pixel],
                Source::LC => self.day(d)?.lc.values()[pixel],
                Source::SM10 => self.coarse(d, pixel)?,
                Source::X => x,
                Source::Y => y,
            };
            out.push(v);
        }
        Ok(())
    }
}

/// Spatial row `(LST, PPT, LAI, LC, SM10, X, Y)` for pixel `pixel` on day `t`.
pub fn build_spatial_row(scene: &Scene, pixel: usize, t: u32) -> Result<Vec<f64>> {
    let cols = FeatureSchema::spatial().columns(None)?;
    let mut out = Vec::with_capacity(cols.len());
    DayView::new(scene, t)?.row(pixel, t, &cols, &mut out)?;
    Ok(out)
}

/// Row for `pixel` on day `t` under `schema`, with masked LST lags left out.
pub fn build_st_row(
    scene: &Scene,
    pixel: usize,
    t: u32,
    schema: &FeatureSchema,
    mask: Option<&GapMask>,
) -> Result<Vec<f64>> {
    let cols = schema.columns(mask)?;
    check_history(schema, t)?;
    let mut out = Vec::with_capacity(cols.len());
    DayView::new(scene, t)?.row(pixel, t, &cols, &mut out)?;
    Ok(out)
}

fn check_history(schema: &FeatureSchema, t: u32) -> Result<()> {
    if t <= schema.max_lag() {
        return Err(Error::Availability(format!(
            "day {t} has too little history for lag {}",
            schema.max_lag()
        )));
    }
    Ok(())
}

/// Training days for target day `t`: coarse SM available, enough lag history,
/// within `[t - history_days, t]`.
pub fn eligible_days(scene: &Scene, schema: &FeatureSchema, t: u32, history_days: u32) -> Vec<u32> {
    let first = t.saturating_sub(history_days).max(schema.max_lag() + 1).max(1);
    (first..=t.min(scene.n_days))
        .filter(|&d| scene.coarse_available(d))
        .collect()
}

/// Rows ordered by (pixel, day) with in-situ (truth 1 km SM) targets.
pub fn assemble_training(
    scene: &Scene,
    selection: &TrainingSelection,
    schema: &FeatureSchema,
    t: u32,
    mask: Option<&GapMask>,
) -> Result<(FeatureMatrix, Vec<f64>)> {
    let view = DayView::new(scene, t)?;
    selection.validate(view.size * view.size)?;
    let cols = schema.columns(mask)?;
    let days = eligible_days(scene, schema, t, selection.history_days);
    if days.is_empty() {
        return Err(Error::Availability(format!(
            "no eligible training days for day {t} (history {})",
            selection.history_days
        )));
    }
    let names = cols.iter().map(|c| c.to_string()).collect();
    let mut m = FeatureMatrix::new(names);
    let mut y = Vec::with_capacity(selection.pixels.len() * days.len());
    let mut row = Vec::with_capacity(cols.len());
    for &p in &selection.pixels {
        for &d in &days {
            row.clear();
            view.row(p, d, &cols, &mut row)?;
            m.push_row(&row)?;
            y.push(view.day(d)?.sm_truth.values()[p]);
        }
    }
    Ok((m, y))
}

/// One row per 1 km pixel on day `t`, row-major.
pub fn assemble_inference(
    scene: &Scene,
    schema: &FeatureSchema,
    t: u32,
    mask: Option<&GapMask>,
) -> Result<FeatureMatrix> {
    let cols = schema.columns(mask)?;
    check_history(schema, t)?;
    let view = DayView::new(scene, t)?;
    let mut m = FeatureMatrix::new(cols.iter().map(|c| c.to_string()).collect());
    let mut row = Vec::with_capacity(cols.len());
    for p in 0..view.size * view.size {
        row.clear();
        view.row(p, t, &cols, &mut row)?;
        m.push_row(&row)?;
    }
    Ok(m)
}

/// Writes `<stem>.csv` and the `<stem>.schema.json` sidecar.
pub fn write_features(
    dir: &std::path::Path,
    stem: &str,
    matrix: &FeatureMatrix,
    schema: &FeatureSchema,
    mask: Option<&GapMask>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        schema: &'a FeatureSchema,
        mask: Option<&'a GapMask>,
        columns: Vec<String>,
    }
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, matrix.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let side = dir.join(format!("{stem}.schema.json"));
    let body = Sidecar {
        schema,
        mask,
        columns: schema.column_names(mask)?,
    };
    let text = serde_json::to_string_pretty(&body).map_err(|e| Error::json(&side, e))?;
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_scene, SceneConfig};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn scene() -> &'static Scene {
        static S: OnceLock<Scene> = OnceLock::new();
        S.get_or_init(|| build_scene(&SceneConfig::default()).unwrap())
    }

    #[test]
    fn forward_fill_examples() {
        assert_eq!(forward_fill_lai(&[(1, 0.5)], 10).unwrap(), vec![0.5; 10]);
        let f = forward_fill_lai(&[(1, 0.0), (8, 1.0)], 10).unwrap();
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], 1.0);
        assert_eq!(forward_fill_lai(&[(3, 2.0)], 4).unwrap(), vec![2.0; 4]);
        assert!(forward_fill_lai(&[], 3).is_err());
        assert!(forward_fill_lai(&[(2, 1.0), (2, 2.0)], 3).is_err());
    }

    #[test]
    fn forward_fill_reconstructs_weekly_steps() {
        let dense: Vec<f64> = (1..=60).map(|d| (d as f64 * 0.3).sin() + 1.0).collect();
        let obs: Vec<(u32, f64)> = (1..=60u32).filter(|d| (d - 1) % 7 == 0).map(|d| (d, dense[d as usize - 1])).collect();
        let f = forward_fill_lai(&obs, 60).unwrap();
        for day in 1..=60u32 {
            let last_obs = day - (day - 1) % 7;
            assert_eq!(f[day as usize - 1], dense[last_obs as usize - 1]);
        }
    }

    #[test]
    fn column_counts() {
        let s = FeatureSchema::spatiotemporal(7, 7, 7).with_lc(false);
        assert_eq!(s.columns(None).unwrap().len(), 27);
        let m = GapMask::consecutive(7, 1).unwrap();
        assert_eq!(s.columns(Some(&m)).unwrap().len(), 26);
        let full = GapMask::consecutive(7, 8).unwrap();
        assert_eq!(s.columns(Some(&full)).unwrap().len(), 19);
        assert_eq!(FeatureSchema::spatial().columns(None).unwrap().len(), 7);
        assert_eq!(FeatureSchema::spatial().with_lc(false).columns(None).unwrap().len(), 6);
        assert!(matches!(s.columns(Some(&GapMask::identity(3))), Err(Error::Schema(_))));
        assert_eq!(
            FeatureSchema::spatial().column_names(None).unwrap(),
            vec!["LST", "PPT", "LAI", "LC", "SM10", "X", "Y"]
        );
    }

    proptest! {
        #[test]
        fn column_count_formula(d1 in 0u32..15, d2 in 0u32..15, d3 in 0u32..15, lc: bool, gaps in 0u32..16) {
            let s = FeatureSchema::spatiotemporal(d1, d2, d3).with_lc(lc);
            let gaps = gaps.min(d1 + 1);
            let m = GapMask::consecutive(d1, gaps).unwrap();
            let n = s.columns(Some(&m)).unwrap().len();
            prop_assert_eq!(n, ((d1 + 1) + (d2 + 1) + (d3 + 1) + 3 + lc as u32 - gaps) as usize);
        }
    }

    #[test]
    fn spatial_row_contents() {
        let s = scene();
        let t = 400;
        assert!(s.coarse_available(t));
        for p in [0usize, 11, 1234, 2499] {
            let row = build_spatial_row(s, p, t).unwrap();
            let (r, c) = (p / 50, p % 50);
            let d = s.day(t).unwrap();
            assert_eq!(row[4], d.coarse_sm.as_ref().unwrap().get(r / 10, c / 10));
            assert_eq!((row[5], row[6]), (c as f64 + 0.5, r as f64 + 0.5));
            assert_eq!(row[0], d.lst.values()[p]);
        }
        let a = build_spatial_row(s, 0, t).unwrap();
        let b = build_spatial_row(s, 2499, t).unwrap();
        assert_ne!(a[5], b[5]);
        assert_ne!(a[6], b[6]);
        assert!(matches!(build_spatial_row(s, 0, 401), Err(Error::Availability(_))));
    }

    #[test]
    fn masked_row_excludes_lst_t() {
        let s = scene();
        let schema = FeatureSchema::spatiotemporal(7, 7, 7).with_lc(false);
        let m = GapMask::consecutive(7, 1).unwrap();
        let row = build_st_row(s, 77, 400, &schema, Some(&m)).unwrap();
        assert_eq!(row.len(), 26);
        let lst_t = s.day(400).unwrap().lst.values()[77];
        assert!(!row.contains(&lst_t));
        let full = build_st_row(s, 77, 400, &schema, None).unwrap();
        assert_eq!(full[7], lst_t);
        let id = build_st_row(s, 77, 400, &schema, Some(&GapMask::identity(7))).unwrap();
        assert_eq!(full, id);
        assert!(matches!(build_st_row(s, 77, 7, &schema, None), Err(Error::Availability(_))));
    }

    #[test]
    fn training_row_counts() {
        let s = scene();
        let t = 700;
        let sel = TrainingSelection::random(Scenario::Brtst, 2500, 1).unwrap();
        let (m, y) = assemble_training(s, &sel, &FeatureSchema::default(), t, None).unwrap();
        assert!((30 * 118..=30 * 124).contains(&m.n_rows()), "{}", m.n_rows());
        assert_eq!(y.len(), m.n_rows());
        let mut sel0 = sel.clone();
        sel0.history_days = 0;
        let (m0, _) = assemble_training(s, &sel0, &FeatureSchema::default(), t, None).unwrap();
        assert_eq!(m0.n_rows(), 30);
        let sel750 = TrainingSelection::random(Scenario::Brt750, 2500, 1).unwrap();
        let (m750, _) = assemble_training(s, &sel750, &FeatureSchema::spatial(), t, None).unwrap();
        assert_eq!(m750.n_rows(), 750);
        assert!(matches!(
            assemble_training(s, &sel0, &FeatureSchema::default(), t + 1, None),
            Err(Error::Availability(_))
        ));
    }

    #[test]
    fn inference_matches_training_rows() {
        let s = scene();
        let t = 700;
        let schema = FeatureSchema::default();
        let sel = TrainingSelection::random(Scenario::Brtst, 2500, 3).unwrap();
        let (m, y) = assemble_training(s, &sel, &schema, t, None).unwrap();
        let inf = assemble_inference(s, &schema, t, None).unwrap();
        assert_eq!(inf.n_rows(), 2500);
        assert_eq!(inf.n_cols(), m.n_cols());
        let days = eligible_days(s, &schema, t, 365);
        let per = days.len();
        assert_eq!(*days.last().unwrap(), t);
        for (k, &p) in sel.pixels.iter().enumerate() {
            let i = k * per + per - 1;
            assert_eq!(m.row(i), inf.row(p));
            assert_eq!(y[i], s.day(t).unwrap().sm_truth.values()[p]);
        }
        let sm = inf.names().iter().position(|n| n == "SM10").unwrap();
        assert_eq!(inf.get(0, sm), inf.get(9 * 50 + 9, sm));
    }

    #[test]
    fn selection_is_distinct_and_seeded() {
        let a = TrainingSelection::random(Scenario::Brt750, 2500, 9).unwrap();
        assert_eq!(a.pixels.len(), 750);
        a.validate(2500).unwrap();
        assert_eq!(a, TrainingSelection::random(Scenario::Brt750, 2500, 9).unwrap());
        assert_ne!(a, TrainingSelection::random(Scenario::Brt750, 2500, 10).unwrap());
    }

    #[test]
    fn export_round_trip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let schema = FeatureSchema::spatial();
        let m = assemble_inference(scene(), &schema, 400, None).unwrap();
        write_features(dir.path(), "f", &m, &schema, None).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2501);
        assert!(csv.starts_with("LST,PPT,LAI,LC,SM10,X,Y\n"));
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.schema.json")).unwrap()).unwrap();
        assert_eq!(side["columns"].as_array().unwrap().len(), 7);
    }
}
