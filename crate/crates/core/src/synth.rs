//! Synthetic multi-resolution land-surface scenes.
//!
//! Stands in for a coupled land-surface/crop model. Rectangular fields of
//! bare soil, sweet corn and cotton follow a crop calendar; a bucket water
//! balance driven by stochastic rain and threshold irrigation produces soil
//! moisture; LST is air temperature plus a dryness term minus a canopy term.
//! Each field is simulated with its field-averaged forcing, so soil moisture
//! is homogeneous within a field. Fields at 200 m are block-averaged to 1 km
//! and 10 km and the observation-scale noise is applied after aggregation.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    add_gaussian_noise, aggregate_block_mean, aggregate_majority, lc, GridGeometry, Raster,
    Variable,
};
use crate::seed;

pub const DAYS_PER_YEAR: u32 = 365;
pub const FINE_RES_M: u32 = 200;
pub const MID_RES_M: u32 = 1000;
pub const COARSE_RES_M: u32 = 10_000;

/// Day of year (1..=365) for a continuous 1-based day index.
pub fn doy(day: u32) -> u32 {
    (day - 1) % DAYS_PER_YEAR + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crop {
    Bare,
    SweetCorn,
    Cotton,
}

impl Crop {
    pub fn code(self) -> u8 {
        match self {
            Crop::Bare => lc::BARE,
            Crop::SweetCorn => lc::SWEET_CORN,
            Crop::Cotton => lc::COTTON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Season {
    pub crop: Crop,
    pub planting_doy: u32,
    pub harvest_doy: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropCalendar {
    pub entries: Vec<Season>,
}

impl Default for CropCalendar {
    fn default() -> Self {
        let s = |crop, planting_doy, harvest_doy| Season {
            crop,
            planting_doy,
            harvest_doy,
        };
        CropCalendar {
            entries: vec![
                s(Crop::SweetCorn, 61, 139),
                s(Crop::SweetCorn, 183, 261),
                s(Crop::Cotton, 153, 332),
            ],
        }
    }
}

impl CropCalendar {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.crop == Crop::Bare
                || e.planting_doy == 0
                || e.planting_doy >= e.harvest_doy
                || e.harvest_doy > DAYS_PER_YEAR
            {
                return Err(Error::Config(format!("invalid crop season {e:?}")));
            }
        }
        Ok(())
    }

    /// The season of `crop` running on day-of-year `d`, if any.
    pub fn season_on(&self, crop: Crop, d: u32) -> Option<&Season> {
        self.entries
            .iter()
            .find(|e| e.crop == crop && e.planting_doy <= d && d <= e.harvest_doy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irrigation {
    /// Field-mean SM below which the field is irrigated (m³/m³).
    pub trigger: f64,
    /// Water added over the field on an irrigation day (mm/hr).
    pub dose: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilParams {
    pub porosity: f64,
    pub wilting_point: f64,
    /// Fraction of plant-available water drained per day.
    pub drainage: f64,
    /// SM gain per mm/hr of water input.
    pub infiltration: f64,
    /// Bare-soil evaporation at 25 °C above freezing and saturation (m³/m³/day).
    pub et_coef: f64,
    /// Relative ET increase per unit LAI.
    pub et_lai: f64,
}

impl Default for SoilParams {
    fn default() -> Self {
        SoilParams {
            porosity: 0.45,
            wilting_point: 0.08,
            drainage: 0.15,
            infiltration: 0.01,
            et_coef: 0.012,
            et_lai: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstParams {
    /// Dry-soil warming at zero SM (K).
    pub dryness_gain: f64,
    /// Canopy cooling per unit LAI (K).
    pub canopy_cooling: f64,
}

impl Default for LstParams {
    fn default() -> Self {
        LstParams {
            dryness_gain: 20.0,
            canopy_cooling: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirTempParams {
    pub mean_k: f64,
    pub seasonal_amplitude_k: f64,
    /// Day of year of the seasonal mean crossing on the way up.
    pub phase_doy: f64,
    pub anomaly_sd_k: f64,
    pub anomaly_ar: f64,
    /// West-east gradient (K/km).
    pub gradient_k_per_km: f64,
}

impl Default for AirTempParams {
    fn default() -> Self {
        AirTempParams {
            mean_k: 294.0,
            seasonal_amplitude_k: 7.0,
            phase_doy: 105.0,
            anomaly_sd_k: 2.0,
            anomaly_ar: 0.7,
            gradient_k_per_km: 0.03,
        }
    }
}

/// Standard deviations of the observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub lst_k: f64,
    pub ppt_mm_hr: f64,
    pub lai: f64,
    pub coarse_sm: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            lst_k: 5.0,
            ppt_mm_hr: 1.0,
            lai: 0.1,
            coarse_sm: 0.02,
        }
    }
}

impl NoiseParams {
    pub fn none() -> Self {
        NoiseParams {
            lst_k: 0.0,
            ppt_mm_hr: 0.0,
            lai: 0.0,
            coarse_sm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub years: u32,
    /// Side of the square region; must be a multiple of 10 km.
    pub extent_km: f64,
    pub n_fields: usize,
    pub field_layout_seed: u64,
    /// Smallest field side in 200 m cells.
    pub min_field_cells: usize,
    /// Relative weights of bare, sweet-corn and cotton fields.
    pub crop_weights: [f64; 3],
    /// Explicit per-field crops, overriding `crop_weights`.
    pub field_crops: Option<Vec<Crop>>,
    pub calendar: CropCalendar,
    /// Mean rain events per week.
    pub rain_event_rate: f64,
    /// Mean peak intensity of a rain event (mm/hr).
    pub rain_depth_scale: f64,
    pub rain_radius_km: (f64, f64),
    pub irrigation_corn: Irrigation,
    pub irrigation_cotton: Irrigation,
    pub soil: SoilParams,
    pub lst: LstParams,
    pub air: AirTempParams,
    pub initial_sm: f64,
    pub coarse_sm_cadence_days: u32,
    pub lai_obs_interval_days: u32,
    pub noise: NoiseParams,
    /// Keep the daily 200 m fields in memory (small scenes only).
    pub keep_fine: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 2007,
            years: 2,
            extent_km: 50.0,
            n_fields: 48,
            field_layout_seed: 11,
            min_field_cells: 10,
            crop_weights: [0.4, 0.3, 0.3],
            field_crops: None,
            calendar: CropCalendar::default(),
            rain_event_rate: 1.5,
            rain_depth_scale: 6.0,
            rain_radius_km: (10.0, 35.0),
            irrigation_corn: Irrigation {
                trigger: 0.15,
                dose: 8.0,
            },
            irrigation_cotton: Irrigation {
                trigger: 0.13,
                dose: 8.0,
            },
            soil: SoilParams::default(),
            lst: LstParams::default(),
            air: AirTempParams::default(),
            initial_sm: 0.2,
            coarse_sm_cadence_days: 3,
            lai_obs_interval_days: 7,
            noise: NoiseParams::default(),
            keep_fine: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.soil;
        if !(0.0 < s.wilting_point && s.wilting_point < s.porosity && s.porosity <= 0.6) {
            return bad(format!(
                "need 0 < wilting point ({}) < porosity ({}) <= 0.6",
                s.wilting_point, s.porosity
            ));
        }
        if !(s.drainage >= 0.0 && s.drainage <= 1.0 && s.infiltration >= 0.0 && s.et_coef >= 0.0) {
            return bad("soil rates must be non-negative (drainage <= 1)".into());
        }
        if !(self.rain_event_rate >= 0.0) || !(self.rain_depth_scale > 0.0) {
            return bad("rain_event_rate must be >= 0 and rain_depth_scale > 0".into());
        }
        if !(self.rain_radius_km.0 > 0.0 && self.rain_radius_km.0 <= self.rain_radius_km.1) {
            return bad("rain_radius_km must be a positive (min, max) range".into());
        }
        if self.coarse_sm_cadence_days < 1 || self.lai_obs_interval_days < 1 {
            return bad("observation cadences must be >= 1 day".into());
        }
        if self.years < 1 {
            return bad("years must be >= 1".into());
        }
        if self.n_fields < 1 || self.min_field_cells < 1 {
            return bad("n_fields and min_field_cells must be >= 1".into());
        }
        if self.crop_weights.iter().any(|w| !(*w >= 0.0)) || self.crop_weights.iter().sum::<f64>() <= 0.0 {
            return bad("crop_weights must be non-negative with a positive sum".into());
        }
        if let Some(c) = &self.field_crops {
            if c.len() != self.n_fields {
                return bad(format!("{} field_crops for {} fields", c.len(), self.n_fields));
            }
        }
        if !(self.initial_sm >= s.wilting_point && self.initial_sm <= s.porosity) {
            return bad("initial_sm must lie in [wilting point, porosity]".into());
        }
        let n = self.noise;
        if [n.lst_k, n.ppt_mm_hr, n.lai, n.coarse_sm].iter().any(|v| !(*v >= 0.0)) {
            return bad("noise standard deviations must be >= 0".into());
        }
        self.calendar.validate()?;
        self.geometry().map(|_| ())
    }

    pub fn n_days(&self) -> u32 {
        self.years * DAYS_PER_YEAR
    }

    pub fn geometry(&self) -> Result<SceneGeometry> {
        let g = |r| {
            GridGeometry::new(self.extent_km, (0.0, 0.0), r)
                .map_err(|e| Error::Config(format!("extent {} km: {e}", self.extent_km)))
        };
        Ok(SceneGeometry {
            fine: g(FINE_RES_M)?,
            mid: g(MID_RES_M)?,
            coarse: g(COARSE_RES_M)?,
        })
    }

    pub fn irrigation(&self, crop: Crop) -> Option<Irrigation> {
        match crop {
            Crop::Bare => None,
            Crop::SweetCorn => Some(self.irrigation_corn),
            Crop::Cotton => Some(self.irrigation_cotton),
        }
    }

    pub fn coarse_sm_available(&self, day: u32) -> bool {
        (day - 1).is_multiple_of(self.coarse_sm_cadence_days)
    }

    pub fn lai_observed(&self, day: u32) -> bool {
        (day - 1).is_multiple_of(self.lai_obs_interval_days)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub fine: GridGeometry,
    pub mid: GridGeometry,
    pub coarse: GridGeometry,
}

impl SceneGeometry {
    pub fn fine_per_mid(&self) -> usize {
        (MID_RES_M / FINE_RES_M) as usize
    }

    pub fn mid_per_coarse(&self) -> usize {
        (COARSE_RES_M / MID_RES_M) as usize
    }
}

// ---------------------------------------------------------------------------
// Land cover

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub crop: Crop,
}

impl Field {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Static field partition of the 200 m grid plus the calendar that turns it
/// into daily land cover.
#[derive(Debug, Clone, PartialEq)]
pub struct LandCover {
    pub size: usize,
    pub fields: Vec<Field>,
    /// Field index of each 200 m cell, row-major.
    pub field_of: Vec<usize>,
    pub calendar: CropCalendar,
}

impl LandCover {
    pub fn code_on(&self, field: usize, day: u32) -> u8 {
        let f = &self.fields[field];
        match self.calendar.season_on(f.crop, doy(day)) {
            Some(_) => f.crop.code(),
            None => lc::BARE,
        }
    }

    /// 200 m land-cover raster on `day`.
    pub fn raster(&self, day: u32) -> Raster {
        let codes: Vec<f64> = (0..self.fields.len())
            .map(|f| self.code_on(f, day) as f64)
            .collect();
        let v = self.field_of.iter().map(|&f| codes[f]).collect();
        Raster::new(Variable::LC, FINE_RES_M, day, self.size, self.size, v)
            .expect("layout matches grid")
    }

    /// LAI of field `field` on `day` (zero outside its season).
    pub fn lai_on(&self, field: usize, day: u32) -> f64 {
        let f = &self.fields[field];
        let d = doy(day);
        match self.calendar.season_on(f.crop, d) {
            Some(s) => lai_curve(
                f.crop,
                (d - s.planting_doy) as i64,
                (s.harvest_doy - s.planting_doy) as i64,
            )
            .expect("in-season arguments are valid"),
            None => 0.0,
        }
    }
}

/// Partitions the grid into `n_fields` rectangles by repeatedly halving the
/// largest splittable rectangle at a random cut, then assigns crops.
pub fn generate_landcover(config: &SceneConfig) -> Result<LandCover> {
    config.calendar.validate()?;
    let size = config.geometry()?.fine.size();
    let min = config.min_field_cells;
    let n = config.n_fields;
    if n < 1 {
        return Err(Error::Config("n_fields must be >= 1".into()));
    }
    let capacity = (size / min).pow(2);
    if n > capacity {
        return Err(Error::Config(format!(
            "{n} fields exceed the grid capacity of {capacity} with {min}-cell minimum sides"
        )));
    }
    let mut rng = seed::rng(seed::derive(config.field_layout_seed, "layout", 0));
    // (row0, col0, rows, cols)
    let mut rects = vec![(0usize, 0usize, size, size)];
    while rects.len() < n {
        let pick = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.2 >= 2 * min || r.3 >= 2 * min)
            .max_by_key(|(i, r)| (r.2 * r.3, std::cmp::Reverse(*i)))
            .map(|(i, _)| i);
        let Some(i) = pick else {
            return Err(Error::Config(format!(
                "cannot partition the grid into {n} fields"
            )));
        };
        let (r0, c0, h, w) = rects[i];
        let split_rows = if h >= 2 * min && w >= 2 * min { h >= w } else { h >= 2 * min };
        let len = if split_rows { h } else { w };
        let cut = rng.random_range(min..=len - min);
        let (a, b) = if split_rows {
            ((r0, c0, cut, w), (r0 + cut, c0, h - cut, w))
        } else {
            ((r0, c0, h, cut), (r0, c0 + cut, h, w - cut))
        };
        rects[i] = a;
        rects.push(b);
    }
    rects.sort();

    let crops: Vec<Crop> = match &config.field_crops {
        Some(c) => c.clone(),
        None => {
            let all = [Crop::Bare, Crop::SweetCorn, Crop::Cotton];
            let total: f64 = config.crop_weights.iter().sum();
            let mut crops: Vec<Crop> = (0..n)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    for (c, w) in all.iter().zip(config.crop_weights) {
                        if u < w {
                            return *c;
                        }
                        u -= w;
                    }
                    Crop::Cotton
                })
                .collect();
            // every weighted crop appears at least once when there is room
            let wanted: Vec<Crop> = all
                .iter()
                .zip(config.crop_weights)
                .filter(|(_, w)| *w > 0.0)
                .map(|(c, _)| *c)
                .collect();
            if n >= wanted.len() {
                for (slot, c) in wanted.iter().enumerate() {
                    if !crops.contains(c) {
                        let j = (slot * n) / wanted.len();
                        crops[j] = *c;
                    }
                }
            }
            crops
        }
    };

    let fields: Vec<Field> = rects
        .iter()
        .zip(&crops)
        .map(|(&(row0, col0, rows, cols), &crop)| Field {
            row0,
            col0,
            rows,
            cols,
            crop,
        })
        .collect();
    let mut field_of = vec![usize::MAX; size * size];
    for (k, f) in fields.iter().enumerate() {
        for r in f.row0..f.row0 + f.rows {
            for c in f.col0..f.col0 + f.cols {
                field_of[r * size + c] = k;
            }
        }
    }
    debug_assert!(field_of.iter().all(|&f| f != usize::MAX));
    Ok(LandCover {
        size,
        fields,
        field_of,
        calendar: config.calendar.clone(),
    })
}

pub fn peak_lai(crop: Crop) -> f64 {
    match crop {
        Crop::SweetCorn => 3.5,
        Crop::Cotton => 4.5,
        Crop::Bare => 0.0,
    }
}

/// Fraction of the season at which LAI peaks.
pub const LAI_PEAK_AT: f64 = 0.7;
/// Fraction of the peak lost between the peak and harvest.
pub const LAI_SENESCENCE: f64 = 0.4;

/// Smooth unimodal canopy curve: `peak·sin²` up to 70 % of the season, then
/// a quadratic decline to 60 % of the peak at harvest.
pub fn lai_curve(crop: Crop, days_since_planting: i64, season_length: i64) -> Result<f64> {
    if days_since_planting < 0 || season_length <= 0 || days_since_planting > season_length {
        return Err(Error::Argument(format!(
            "need 0 <= days_since_planting ({days_since_planting}) <= season_length ({season_length})"
        )));
    }
    let peak = peak_lai(crop);
    let s = days_since_planting as f64 / season_length as f64;
    Ok(if s <= LAI_PEAK_AT {
        peak * (std::f64::consts::FRAC_PI_2 * s / LAI_PEAK_AT).sin().powi(2)
    } else {
        let u = (s - LAI_PEAK_AT) / (1.0 - LAI_PEAK_AT);
        peak * (1.0 - LAI_SENESCENCE * u * u)
    })
}

// ---------------------------------------------------------------------------
// Weather

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainEvent {
    pub x_km: f64,
    pub y_km: f64,
    pub radius_km: f64,
    /// Peak intensity at the centre (mm/hr).
    pub depth: f64,
}

/// Rain events of `day`, drawn from a per-day stream.
pub fn rain_events(config: &SceneConfig, day: u32) -> Vec<RainEvent> {
    let rate = config.rain_event_rate / 7.0;
    if rate <= 0.0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed::derive(config.seed, "rain", day as u64));
    let count = Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize;
    let depth = Exp::new(1.0 / config.rain_depth_scale).expect("positive scale");
    let (rmin, rmax) = config.rain_radius_km;
    let e = config.extent_km;
    (0..count)
        .map(|_| {
            let radius_km = rng.random_range(rmin..=rmax);
            RainEvent {
                x_km: rng.random_range(-0.5 * radius_km..=e + 0.5 * radius_km),
                y_km: rng.random_range(-0.5 * radius_km..=e + 0.5 * radius_km),
                radius_km,
                depth: depth.sample(&mut rng),
            }
        })
        .collect()
}

/// Regional air-temperature anomaly: an AR(1)-like sum over a ten-day
/// memory of per-day standard-normal shocks.
fn air_anomaly(config: &SceneConfig, day: u32) -> f64 {
    let a = config.air.anomaly_ar;
    let scale = config.air.anomaly_sd_k * (1.0 - a * a).max(0.0).sqrt();
    (0..10u32)
        .filter(|&j| j < day)
        .map(|j| {
            let mut rng = seed::rng(seed::derive(config.seed, "air", (day - j) as u64));
            let z: f64 = StandardNormal.sample(&mut rng);
            a.powi(j as i32) * z
        })
        .sum::<f64>()
        * scale
}

/// Daily forcing: water input (rain + irrigation) and air temperature at 200 m.
#[derive(Debug, Clone)]
pub struct Weather {
    pub ppt: Raster,
    pub air_temp: Raster,
    pub events: usize,
    /// Fields irrigated today.
    pub irrigated: Vec<usize>,
}

/// Forcing for `day`. `prev_field_sm[f]` is field `f`'s mean SM on the
/// previous day; a cropped field below its trigger receives its dose.
pub fn generate_weather(
    config: &SceneConfig,
    landcover: &LandCover,
    day: u32,
    prev_field_sm: &[f64],
) -> Result<Weather> {
    if day < 1 || day > config.n_days() {
        return Err(Error::Argument(format!("day {day} outside the scene")));
    }
    if prev_field_sm.len() != landcover.fields.len() {
        return Err(Error::Dimension("one previous SM per field required".into()));
    }
    let n = landcover.size;
    let cell = FINE_RES_M as f64 / 1000.0;
    let events = rain_events(config, day);
    let mut ppt = vec![0.0; n * n];
    for ev in &events {
        let inv = 1.0 / (2.0 * ev.radius_km * ev.radius_km);
        for r in 0..n {
            let dy = (r as f64 + 0.5) * cell - ev.y_km;
            for c in 0..n {
                let dx = (c as f64 + 0.5) * cell - ev.x_km;
                ppt[r * n + c] += ev.depth * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let mut irrigated = Vec::new();
    for (k, f) in landcover.fields.iter().enumerate() {
        let Some(irr) = config.irrigation(f.crop) else {
            continue;
        };
        if landcover.code_on(k, day) != lc::BARE && prev_field_sm[k] < irr.trigger {
            irrigated.push(k);
            for r in f.row0..f.row0 + f.rows {
                for c in f.col0..f.col0 + f.cols {
                    ppt[r * n + c] += irr.dose;
                }
            }
        }
    }
    let a = &config.air;
    let seasonal = a.mean_k
        + a.seasonal_amplitude_k
            * (2.0 * std::f64::consts::PI * (doy(day) as f64 - a.phase_doy) / DAYS_PER_YEAR as f64)
                .sin()
        + air_anomaly(config, day);
    let mid = 0.5 * config.extent_km;
    let air: Vec<f64> = (0..n * n)
        .map(|i| seasonal + a.gradient_k_per_km * (((i % n) as f64 + 0.5) * cell - mid))
        .collect();
    Ok(Weather {
        ppt: Raster::new(Variable::PPT, FINE_RES_M, day, n, n, ppt)?,
        air_temp: Raster::new(Variable::LST, FINE_RES_M, day, n, n, air)?,
        events: events.len(),
        irrigated,
    })
}

// ---------------------------------------------------------------------------
// Water balance

/// One day of the bucket model, per cell:
///
/// ```text
/// SM_t  = clamp(SM + infil·PPT − drain·(SM − wilt) − ET, wilt, porosity)
/// ET    = et_coef·(1 + et_lai·LAI)·max(0, (T − 273.15)/25)·(SM − wilt)/(porosity − wilt)
/// LST_t = T + dryness_gain·(1 − SM_t/porosity) − canopy_cooling·LAI
/// ```
pub fn step_water_balance(
    sm_prev: &Raster,
    ppt: &Raster,
    lai: &Raster,
    air_temp: &Raster,
    soil: &SoilParams,
    lst: &LstParams,
) -> Result<(Raster, Raster)> {
    for (name, r) in [("PPT", ppt), ("LAI", lai), ("air temperature", air_temp)] {
        if !r.same_shape(sm_prev) {
            return Err(Error::Dimension(format!(
                "{name} raster {}x{} does not match SM raster {}x{}",
                r.height, r.width, sm_prev.height, sm_prev.width
            )));
        }
    }
    let day = ppt.day;
    let avail = soil.porosity - soil.wilting_point;
    let n = sm_prev.values().len();
    let mut sm = Vec::with_capacity(n);
    let mut t_s = Vec::with_capacity(n);
    for i in 0..n {
        let s = sm_prev.values()[i];
        let p = ppt.values()[i];
        let l = lai.values()[i];
        let t = air_temp.values()[i];
        let wet = ((s - soil.wilting_point) / avail).max(0.0);
        let et = soil.et_coef * (1.0 + soil.et_lai * l) * ((t - 273.15) / 25.0).max(0.0) * wet;
        let next = (s + soil.infiltration * p - soil.drainage * (s - soil.wilting_point) - et)
            .clamp(soil.wilting_point, soil.porosity);
        sm.push(next);
        t_s.push(t + lst.dryness_gain * (1.0 - next / soil.porosity) - lst.canopy_cooling * l);
    }
    let (h, w, res) = (sm_prev.height, sm_prev.width, sm_prev.resolution_m);
    Ok((
        Raster::new(Variable::SM, res, day, h, w, sm)?,
        Raster::new(Variable::LST, res, day, h, w, t_s)?,
    ))
}

// ---------------------------------------------------------------------------
// Scene

/// Noise-free companions of the observed 1 km layers, plus the 10 km truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthLayers {
    pub lst: Raster,
    pub lai: Raster,
    pub ppt: Raster,
    pub coarse_sm: Raster,
}

/// Everything the downscaler sees on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayLayers {
    pub day: u32,
    /// Noise-free 1 km SM; in-situ targets and evaluation truth.
    pub sm_truth: Raster,
    pub lst: Raster,
    /// Noisy 1 km LAI on observation days only.
    pub lai: Option<Raster>,
    pub ppt: Raster,
    pub lc: Raster,
    /// Noisy 10 km SM on days it is observed.
    pub coarse_sm: Option<Raster>,
    /// Present for generated scenes, absent for scenes loaded from disk.
    pub truth: Option<TruthLayers>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineDay {
    pub sm: Raster,
    pub lst: Raster,
    pub lai: Raster,
    pub ppt: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub geometry: SceneGeometry,
    pub n_days: u32,
    /// Index `day - 1`.
    pub days: Vec<DayLayers>,
    /// 200 m land cover at each day it changes, ascending by day.
    pub lc_fine: Vec<Raster>,
    /// Daily 200 m fields when `keep_fine` was requested.
    pub fine: Option<Vec<FineDay>>,
    pub rain_event_count: usize,
    pub soil: SoilParams,
}

impl Scene {
    pub fn day(&self, day: u32) -> Result<&DayLayers> {
        if day < 1 || day > self.n_days {
            return Err(Error::Availability(format!(
                "day {day} outside scene days 1..={}",
                self.n_days
            )));
        }
        Ok(&self.days[(day - 1) as usize])
    }

    pub fn coarse_available(&self, day: u32) -> bool {
        self.day(day).map(|d| d.coarse_sm.is_some()).unwrap_or(false)
    }

    pub fn coarse_days(&self) -> Vec<u32> {
        self.days
            .iter()
            .filter(|d| d.coarse_sm.is_some())
            .map(|d| d.day)
            .collect()
    }

    /// 200 m land cover in force on `day`.
    pub fn lc_fine_at(&self, day: u32) -> Result<&Raster> {
        let i = self.lc_fine.partition_point(|r| r.day <= day);
        if i == 0 {
            return Err(Error::Availability(format!("no 200 m land cover on or before day {day}")));
        }
        Ok(&self.lc_fine[i - 1])
    }

    pub fn mid_size(&self) -> usize {
        self.geometry.mid.size()
    }
}

fn noise_seed(config: &SceneConfig, what: &str, day: u32) -> u64 {
    seed::derive(config.seed, what, day as u64)
}

/// Runs land cover, weather and the water balance day by day at 200 m,
/// aggregates to 1 km and 10 km, and applies the observation noise.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let geometry = config.geometry()?;
    let landcover = generate_landcover(config)?;
    let n = geometry.fine.size();
    let f_mid = geometry.fine_per_mid();
    let f_coarse = geometry.mid_per_coarse();
    let n_fields = landcover.fields.len();
    let soil = config.soil;

    let mut field_sm = vec![config.initial_sm; n_fields];
    let mut sm_prev = Raster::filled(Variable::SM, FINE_RES_M, 0, n, n, config.initial_sm)?;
    let mut days = Vec::with_capacity(config.n_days() as usize);
    let mut fine_days = config.keep_fine.then(Vec::new);
    let mut lc_fine: Vec<Raster> = Vec::new();
    let mut events = 0;
    let broadcast = |per_field: &[f64]| -> Vec<f64> {
        landcover.field_of.iter().map(|&f| per_field[f]).collect()
    };
    let field_means = |r: &Raster| -> Vec<f64> {
        let mut s = vec![0.0; n_fields];
        for (v, &f) in r.values().iter().zip(&landcover.field_of) {
            s[f] += v;
        }
        s.iter()
            .zip(&landcover.fields)
            .map(|(s, f)| s / f.cells() as f64)
            .collect()
    };

    for day in 1..=config.n_days() {
        let lc_r = landcover.raster(day);
        if lc_fine.last().is_none_or(|l| l.values() != lc_r.values()) {
            lc_fine.push(lc_r.clone());
        }
        let w = generate_weather(config, &landcover, day, &field_sm)?;
        events += w.events;
        let lai_field: Vec<f64> = (0..n_fields).map(|f| landcover.lai_on(f, day)).collect();
        let lai = Raster::new(Variable::LAI, FINE_RES_M, day, n, n, broadcast(&lai_field))?;
        let ppt_forcing =
            Raster::new(Variable::PPT, FINE_RES_M, day, n, n, broadcast(&field_means(&w.ppt)))?;
        let (sm, lst_truth) =
            step_water_balance(&sm_prev, &ppt_forcing, &lai, &w.air_temp, &soil, &config.lst)?;
        field_sm = field_means(&sm);

        let sm_mid = aggregate_block_mean(&sm, f_mid)?;
        let lst_mid = aggregate_block_mean(&lst_truth, f_mid)?;
        let lai_mid = aggregate_block_mean(&lai, f_mid)?;
        let ppt_mid = aggregate_block_mean(&w.ppt, f_mid)?;
        let lc_mid = aggregate_majority(&lc_r, f_mid)?;
        let sm_coarse = aggregate_block_mean(&sm_mid, f_coarse)?;

        let nz = &config.noise;
        let lst_obs = add_gaussian_noise(&lst_mid, nz.lst_k, noise_seed(config, "noise-LST", day))?;
        let ppt_obs = add_gaussian_noise(&ppt_mid, nz.ppt_mm_hr, noise_seed(config, "noise-PPT", day))?;
        let lai_obs = config
            .lai_observed(day)
            .then(|| add_gaussian_noise(&lai_mid, nz.lai, noise_seed(config, "noise-LAI", day)))
            .transpose()?;
        let coarse_obs = config
            .coarse_sm_available(day)
            .then(|| add_gaussian_noise(&sm_coarse, nz.coarse_sm, noise_seed(config, "noise-SM", day)))
            .transpose()?;

        days.push(DayLayers {
            day,
            sm_truth: sm_mid,
            lst: lst_obs,
            lai: lai_obs,
            ppt: ppt_obs,
            lc: lc_mid,
            coarse_sm: coarse_obs,
            truth: Some(TruthLayers {
                lst: lst_mid,
                lai: lai_mid,
                ppt: ppt_mid,
                coarse_sm: sm_coarse,
            }),
        });
        if let Some(fd) = fine_days.as_mut() {
            fd.push(FineDay {
                sm: sm.clone(),
                lst: lst_truth,
                lai,
                ppt: w.ppt,
            });
        }
        sm_prev = sm;
    }
    Ok(Scene {
        geometry,
        n_days: config.n_days(),
        days,
        lc_fine,
        fine: fine_days,
        rain_event_count: events,
        soil,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> SceneConfig {
        SceneConfig {
            extent_km: 10.0,
            n_fields: 6,
            min_field_cells: 5,
            keep_fine: true,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn calendar_defaults() {
        let c = CropCalendar::default();
        let pairs: Vec<(u32, u32)> = c.entries.iter().map(|e| (e.planting_doy, e.harvest_doy)).collect();
        assert_eq!(pairs, vec![(61, 139), (183, 261), (153, 332)]);
    }

    #[test]
    fn landcover_phenology() {
        let cfg = SceneConfig::default();
        let lcov = generate_landcover(&cfg).unwrap();
        assert!(lcov.raster(39).values().iter().all(|&v| v == 0.0));
        let r = lcov.raster(222);
        for (i, &f) in lcov.field_of.iter().enumerate() {
            assert_eq!(r.values()[i], lcov.fields[f].crop.code() as f64);
        }
        assert!(r.values().contains(&1.0) && r.values().contains(&2.0));
        // second year follows the same calendar
        assert_eq!(lcov.raster(222 + 365).values(), r.values());
        let total: usize = lcov.fields.iter().map(|f| f.cells()).sum();
        assert_eq!(total, 250 * 250);
        assert!(lcov.fields.iter().all(|f| f.rows >= 10 && f.cols >= 10));
    }

    #[test]
    fn single_cotton_field() {
        let cfg = SceneConfig {
            n_fields: 1,
            field_crops: Some(vec![Crop::Cotton]),
            ..SceneConfig::default()
        };
        let lcov = generate_landcover(&cfg).unwrap();
        assert!(lcov.raster(200).values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn too_many_fields_is_config_error() {
        let cfg = SceneConfig {
            n_fields: 626,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_landcover(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lai_curve_shape() {
        assert_eq!(lai_curve(Crop::SweetCorn, 0, 78).unwrap(), 0.0);
        assert!((lai_curve(Crop::SweetCorn, 70, 100).unwrap() - 3.5).abs() < 1e-12);
        assert!((lai_curve(Crop::Cotton, 7, 10).unwrap() - 4.5).abs() < 1e-12);
        assert!(lai_curve(Crop::Cotton, -1, 10).is_err());
        for (crop, len) in [(Crop::SweetCorn, 78), (Crop::Cotton, 179)] {
            let v: Vec<f64> = (0..=len).map(|d| lai_curve(crop, d, len).unwrap()).collect();
            assert!(v.iter().all(|&x| x >= 0.0));
            let signs: Vec<bool> = v.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).map(|d| d > 0.0).collect();
            let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(changes, 1);
            let peak = v.iter().cloned().fold(0.0, f64::max);
            assert!(v[len as usize] <= 0.8 * peak);
        }
    }

    #[test]
    fn no_rain_no_crops_is_dry() {
        let cfg = SceneConfig {
            rain_event_rate: 0.0,
            ..small_config()
        };
        let lcov = generate_landcover(&cfg).unwrap();
        let w = generate_weather(&cfg, &lcov, 20, &vec![0.1; lcov.fields.len()]).unwrap();
        assert!(w.ppt.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn irrigation_only_on_dry_cropped_field() {
        let cfg = SceneConfig {
            rain_event_rate: 0.0,
            field_crops: Some(vec![Crop::SweetCorn, Crop::Bare, Crop::Cotton, Crop::Bare, Crop::Bare, Crop::Bare]),
            ..small_config()
        };
        let lcov = generate_landcover(&cfg).unwrap();
        let mut prev = vec![0.3; 6];
        prev[0] = 0.1;
        let day = 100; // corn in season, cotton not yet planted
        let w = generate_weather(&cfg, &lcov, day, &prev).unwrap();
        assert_eq!(w.irrigated, vec![0]);
        for (i, &f) in lcov.field_of.iter().enumerate() {
            let v = w.ppt.values()[i];
            if f == 0 {
                assert!(v > 0.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn rain_event_count_is_poisson() {
        let cfg = SceneConfig::default();
        let total: usize = (1..=cfg.n_days()).map(|d| rain_events(&cfg, d).len()).sum();
        let mean = cfg.rain_event_rate * 104.0;
        assert!((total as f64 - mean).abs() <= 3.0 * mean.sqrt() + 1.0, "{total} vs {mean}");
    }

    fn flat(v: f64, var: Variable) -> Raster {
        Raster::filled(var, 200, 1, 1, 2, v).unwrap()
    }

    #[test]
    fn water_balance_fixed_point_at_wilting() {
        let soil = SoilParams::default();
        let sm = flat(soil.wilting_point, Variable::SM);
        let (next, _) = step_water_balance(
            &sm,
            &flat(0.0, Variable::PPT),
            &flat(3.0, Variable::LAI),
            &flat(300.0, Variable::LST),
            &soil,
            &LstParams::default(),
        )
        .unwrap();
        assert!(next.values().iter().all(|&v| v == soil.wilting_point));
    }

    #[test]
    fn water_balance_dries_monotonically_after_event() {
        let soil = SoilParams::default();
        let lp = LstParams::default();
        let mut sm = flat(0.1, Variable::SM);
        let air = flat(300.0, Variable::LST);
        let lai = flat(1.0, Variable::LAI);
        (sm, _) = step_water_balance(&sm, &flat(20.0, Variable::PPT), &lai, &air, &soil, &lp).unwrap();
        let mut last = sm.values()[0];
        for _ in 0..40 {
            (sm, _) = step_water_balance(&sm, &flat(0.0, Variable::PPT), &lai, &air, &soil, &lp).unwrap();
            assert!(sm.values()[0] <= last);
            last = sm.values()[0];
        }
        assert!(last < 0.1 + 20.0 * soil.infiltration);
    }

    #[test]
    fn canopy_cools_surface() {
        let soil = SoilParams::default();
        let lp = LstParams::default();
        let sm = flat(0.25, Variable::SM);
        let lai = Raster::new(Variable::LAI, 200, 1, 1, 2, vec![0.0, 4.0]).unwrap();
        let (sm1, lst) =
            step_water_balance(&sm, &flat(0.0, Variable::PPT), &lai, &flat(300.0, Variable::LST), &soil, &lp)
                .unwrap();
        let diff = lst.values()[0] - lst.values()[1];
        let sm_effect = lp.dryness_gain * (sm1.values()[0] - sm1.values()[1]) / soil.porosity;
        assert!(diff > 0.0);
        assert!((diff - (lp.canopy_cooling * 4.0 - sm_effect)).abs() < 1e-9);
    }

    #[test]
    fn water_balance_shape_mismatch() {
        let soil = SoilParams::default();
        let big = Raster::filled(Variable::PPT, 200, 1, 2, 2, 0.0).unwrap();
        let r = step_water_balance(
            &flat(0.2, Variable::SM),
            &big,
            &flat(0.0, Variable::LAI),
            &flat(300.0, Variable::LST),
            &soil,
            &LstParams::default(),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn small_scene_invariants() {
        let cfg = small_config();
        let s = build_scene(&cfg).unwrap();
        assert_eq!(s.days.len(), 730);
        let fine = s.fine.as_ref().unwrap();
        for (d, f) in s.days.iter().zip(fine) {
            let agg = aggregate_block_mean(&f.sm, 5).unwrap();
            for (a, b) in agg.values().iter().zip(d.sm_truth.values()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((f.sm.mean() - d.sm_truth.mean()).abs() < 1e-12);
            assert!(f
                .sm
                .values()
                .iter()
                .all(|&v| v >= cfg.soil.wilting_point && v <= cfg.soil.porosity));
            d.lst.check_physical().unwrap();
            d.ppt.check_physical().unwrap();
            if let Some(c) = &d.coarse_sm {
                c.check_physical().unwrap();
            }
        }
        // LAI is zero out of season
        let lcov = generate_landcover(&cfg).unwrap();
        for (d, f) in fine.iter().enumerate() {
            let lcr = lcov.raster(d as u32 + 1);
            for (l, c) in f.lai.values().iter().zip(lcr.values()) {
                if *c == 0.0 {
                    assert_eq!(*l, 0.0);
                }
            }
        }
    }

    #[test]
    fn coarse_cadence_year_two() {
        let cfg = SceneConfig::default();
        let n = (366..=730).filter(|&d| cfg.coarse_sm_available(d)).count();
        assert!((120..=124).contains(&n), "{n}");
    }

    #[test]
    fn scene_is_deterministic() {
        let cfg = SceneConfig {
            keep_fine: false,
            years: 1,
            ..small_config()
        };
        assert_eq!(build_scene(&cfg).unwrap(), build_scene(&cfg).unwrap());
    }
}
