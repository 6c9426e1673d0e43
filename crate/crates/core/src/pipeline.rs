//! Scenario runs and experiment sweeps over a built scene.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    beta_sweep, cross_validate_treecount, default_beta_grid, fit_bagged, select_trees, Ensemble,
    SweepPoint, DEFAULT_LAMBDA, DEFAULT_TREES,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble_inference, assemble_training, FeatureSchema, GapMask, Mode, Scenario, Source,
    TrainingSelection,
};
use crate::matrix::FeatureMatrix;
use crate::metrics::{self, coarse_consistency, compute_strata_rmse, StrataTable, Stratum, LARGE_ERROR};
use crate::raster::{write_tdr, Raster, Variable, SM_MAX};
use crate::scene_io::load_scene;
use crate::seed;
use crate::synth::{build_scene, doy, Scene, SceneConfig, DAYS_PER_YEAR};
use crate::tree::FitParams;

/// Tolerance of the coarse-consistency diagnostic (three coarse noise SDs).
pub const CONSISTENCY_TOL: f64 = 0.06;
/// Day of year used to break ties when looking for the most mixed land cover.
pub const HETEROGENEITY_REFERENCE_DOY: u32 = 222;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDays {
    /// Every day with coarse SM.
    AllAvailable,
    /// Every day with coarse SM in the given (1-based) year.
    Year(u32),
    /// Every `every`-th day with coarse SM in `year`.
    Sample { year: u32, every: usize },
    Days(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Scene directory or manifest written by `synth`.
    pub scene_manifest: Option<PathBuf>,
    /// Scene built in memory when no manifest is given.
    pub scene: Option<SceneConfig>,
    /// Defaults to the scenario's schema.
    pub schema: Option<FeatureSchema>,
    pub n_trees: usize,
    pub lambda: f64,
    pub seed: u64,
    pub eval_days: EvalDays,
    /// Defaults to the scenario's window.
    pub history_days: Option<u32>,
    pub fit: FitParams,
    /// A model trained on one evaluation day serves this many consecutive evaluation days.
    pub reuse_model_days: usize,
    pub insitu_noise_sd: f64,
    /// Separate ensemble per land-cover class (pooled fallback).
    pub stratify_lc: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Brtst,
            scene_manifest: None,
            scene: None,
            schema: None,
            n_trees: DEFAULT_TREES,
            lambda: DEFAULT_LAMBDA,
            seed: 1,
            eval_days: EvalDays::Year(2),
            history_days: None,
            fit: FitParams::default(),
            reuse_model_days: 1,
            insitu_noise_sd: 0.0,
            stratify_lc: false,
        }
    }
}

impl ScenarioConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        ScenarioConfig {
            scenario,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.reuse_model_days < 1 {
            return Err(Error::Config("reuse_model_days must be >= 1".into()));
        }
        if !(self.insitu_noise_sd >= 0.0) {
            return Err(Error::Config("insitu_noise_sd must be >= 0".into()));
        }
        if let Some(p) = &self.scene_manifest {
            if !p.exists() {
                return Err(Error::Config(format!("scene {} does not exist", p.display())));
            }
        }
        if self.stratify_lc && !self.schema().include_lc {
            return Err(Error::Config("stratify_lc needs LC in the schema".into()));
        }
        if let EvalDays::Sample { every: 0, .. } = self.eval_days {
            return Err(Error::Config("eval_days.sample.every must be >= 1".into()));
        }
        self.fit.validate()?;
        if let Some(s) = &self.scene {
            s.validate()?;
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        self.schema.unwrap_or_else(|| self.scenario.default_schema())
    }

    pub fn history_days(&self) -> u32 {
        self.history_days.unwrap_or_else(|| self.scenario.history_days())
    }

    /// Loads the referenced scene, or builds the configured one.
    pub fn load_scene(&self) -> Result<Scene> {
        match (&self.scene_manifest, &self.scene) {
            (Some(p), _) => load_scene(p),
            (None, Some(c)) => build_scene(c),
            (None, None) => build_scene(&SceneConfig::default()),
        }
    }

    pub fn selection(&self, scene: &Scene) -> Result<TrainingSelection> {
        let n = scene.mid_size();
        let mut s = TrainingSelection::random(self.scenario, n * n, self.seed)?;
        s.history_days = self.history_days();
        Ok(s)
    }
}

pub fn resolve_eval_days(scene: &Scene, days_spec: &EvalDays) -> Result<Vec<u32>> {
    let in_year = |y: u32| {
        let lo = (y - 1) * DAYS_PER_YEAR + 1;
        let hi = y * DAYS_PER_YEAR;
        scene.coarse_days().into_iter().filter(move |d| (lo..=hi).contains(d))
    };
    let days: Vec<u32> = match days_spec {
        EvalDays::AllAvailable => scene.coarse_days(),
        EvalDays::Year(y) if *y >= 1 => in_year(*y).collect(),
        EvalDays::Sample { year, every } if *year >= 1 && *every >= 1 => in_year(*year).step_by(*every).collect(),
        EvalDays::Days(d) => d.clone(),
        _ => return Err(Error::Config("years are 1-based".into())),
    };
    if days.is_empty() {
        return Err(Error::Config(format!("no evaluation days for {days_spec:?}")));
    }
    Ok(days)
}

/// Trained downscaling model for one day.
#[derive(Debug, Clone)]
pub struct Model {
    pub pooled: Ensemble,
    /// Per-LC ensembles indexed by code, when stratified.
    pub per_lc: Vec<Option<Ensemble>>,
    pub lc_column: Option<usize>,
    pub n_train_rows: usize,
}

impl Model {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let pooled = self.pooled.predict_all(x, false)?;
        let Some(col) = self.lc_column else {
            return Ok(pooled);
        };
        x.rows()
            .zip(pooled)
            .map(|(row, p)| match self.per_lc.get(row[col] as usize) {
                Some(Some(e)) => e.predict(row),
                _ => Ok(p),
            })
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.pooled.active.len()
    }
}

fn fit_pruned(x: &FeatureMatrix, y: &[f64], cfg: &ScenarioConfig, seed: u64) -> Result<Ensemble> {
    let bag = fit_bagged(x, y, cfg.n_trees, &cfg.fit, seed)?;
    // validation on the training rows: the in-situ pixels are the only SM observations
    Ok(select_trees(&bag, x, y, cfg.lambda)?.0)
}

pub fn train_model(
    scene: &Scene,
    cfg: &ScenarioConfig,
    selection: &TrainingSelection,
    mask: Option<&GapMask>,
    t: u32,
) -> Result<Model> {
    let schema = cfg.schema();
    let (x, mut y) = assemble_training(scene, selection, &schema, t, mask)?;
    x.check_finite()?;
    if cfg.insitu_noise_sd > 0.0 {
        let mut rng = seed::rng(seed::derive(cfg.seed, "insitu", t as u64));
        for v in &mut y {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + cfg.insitu_noise_sd * z).clamp(0.0, SM_MAX);
        }
    }
    let tree_seed = seed::derive(cfg.seed, "trees", t as u64);
    let pooled = fit_pruned(&x, &y, cfg, tree_seed)?;
    let mut per_lc = Vec::new();
    let mut lc_column = None;
    if cfg.stratify_lc {
        let col = schema
            .columns(mask)?
            .iter()
            .position(|c| c.source == Source::LC)
            .ok_or_else(|| Error::Config("stratify_lc needs LC in the schema".into()))?;
        lc_column = Some(col);
        for code in 0..3u8 {
            let rows: Vec<usize> = (0..x.n_rows()).filter(|&i| x.get(i, col) == code as f64).collect();
            let e = if rows.len() >= 2 * cfg.fit.min_leaf_count {
                let xs = x.select_rows(&rows);
                let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                Some(fit_pruned(&xs, &ys, cfg, seed::derive(tree_seed, "lc", code as u64))?)
            } else {
                None
            };
            per_lc.push(e);
        }
    }
    Ok(Model {
        pooled,
        per_lc,
        lc_column,
        n_train_rows: y.len(),
    })
}

pub fn downscale(scene: &Scene, cfg: &ScenarioConfig, model: &Model, mask: Option<&GapMask>, t: u32) -> Result<Raster> {
    let x = assemble_inference(scene, &cfg.schema(), t, mask)?;
    x.check_finite()?;
    let pred = model.predict(&x)?;
    let n = scene.mid_size();
    let r = Raster::new(Variable::SM, scene.geometry.mid.resolution_m, t, n, n, pred)?;
    r.check_physical()?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayMetrics {
    pub day: u32,
    pub doy: u32,
    pub rmse: f64,
    pub mean_abs_error: f64,
    pub frac_large_error: f64,
    pub strata: StrataTable,
    pub consistent_blocks: usize,
    pub blocks: usize,
    pub n_train_rows: usize,
    pub n_active: usize,
}

pub fn evaluate_day(scene: &Scene, pred: &Raster, t: u32) -> Result<DayMetrics> {
    let d = scene.day(t)?;
    let truth = d.sm_truth.values();
    let p = pred.values();
    let strata = compute_strata_rmse(pred, &d.sm_truth, scene.lc_fine_at(t)?, doy(t))?;
    let (ok, blocks) = match &d.coarse_sm {
        Some(c) => coarse_consistency(pred, c, CONSISTENCY_TOL)?,
        None => (0, 0),
    };
    Ok(DayMetrics {
        day: t,
        doy: doy(t),
        rmse: metrics::rmse(p, truth),
        mean_abs_error: metrics::mean_abs_error(p, truth),
        frac_large_error: p.iter().zip(truth).filter(|(a, b)| (*a - *b).abs() > LARGE_ERROR).count() as f64
            / p.len() as f64,
        strata,
        consistent_blocks: ok,
        blocks,
        n_train_rows: 0,
        n_active: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayFailure {
    pub day: u32,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct DayOutcome {
    pub metrics: DayMetrics,
    pub prediction: Raster,
}

/// Trains and downscales every day in `days`, grouping them into runs of
/// `reuse_model_days` that share the model trained on the run's first day.
pub fn run_days(
    scene: &Scene,
    cfg: &ScenarioConfig,
    mask: Option<&GapMask>,
    days: &[u32],
) -> Result<Vec<(u32, Result<DayOutcome>)>> {
    let selection = cfg.selection(scene)?;
    let chunks: Vec<&[u32]> = days.chunks(cfg.reuse_model_days).collect();
    let per_chunk: Vec<Vec<(u32, Result<DayOutcome>)>> = chunks
        .par_iter()
        .map(|chunk| {
            let model = train_model(scene, cfg, &selection, mask, chunk[0]);
            chunk
                .iter()
                .map(|&t| {
                    let out = model.as_ref().map_err(clone_err).and_then(|m| {
                        let prediction = downscale(scene, cfg, m, mask, t)?;
                        let mut metrics = evaluate_day(scene, &prediction, t)?;
                        metrics.n_train_rows = m.n_train_rows;
                        metrics.n_active = m.n_active();
                        Ok(DayOutcome { metrics, prediction })
                    });
                    if let Err(e) = &out {
                        log::warn!("day {t}: {e}");
                    }
                    (t, out)
                })
                .collect()
        })
        .collect();
    Ok(per_chunk.into_iter().flatten().collect())
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Availability(m) => Error::Availability(m.clone()),
        Error::Data(m) => Error::Data(m.clone()),
        Error::Config(m) => Error::Config(m.clone()),
        Error::Schema(m) => Error::Schema(m.clone()),
        Error::NonFinite { row, col } => Error::NonFinite { row: *row, col: *col },
        other => Error::State(format!("training failed: {other}")),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub days: Vec<DayMetrics>,
    pub failures: Vec<DayFailure>,
    /// Per-pixel time-averaged absolute error.
    #[serde(skip)]
    pub pixel_mean_error: Option<Raster>,
    /// Per-pixel SD of the absolute error over time.
    #[serde(skip)]
    pub pixel_error_sd: Option<Raster>,
}

impl MetricsReport {
    /// Mean of the daily spatial RMSE.
    pub fn regional_rmse(&self) -> f64 {
        metrics::mean_sd(&self.days.iter().map(|d| d.rmse).collect::<Vec<_>>()).0
    }

    pub fn daily_rmse_sd(&self) -> f64 {
        metrics::mean_sd(&self.days.iter().map(|d| d.rmse).collect::<Vec<_>>()).1
    }

    /// Mean and SD over pixels of the time-averaged absolute error.
    pub fn time_averaged_error(&self) -> (f64, f64) {
        match &self.pixel_mean_error {
            Some(r) => metrics::mean_sd(r.values()),
            None => (f64::NAN, f64::NAN),
        }
    }

    /// Strata pooled over all evaluated days.
    pub fn strata(&self) -> StrataTable {
        let mut t = StrataTable::default();
        for d in &self.days {
            t.add(&d.strata);
        }
        t
    }

    pub fn consistency_fraction(&self) -> f64 {
        let ok: usize = self.days.iter().map(|d| d.consistent_blocks).sum();
        let n: usize = self.days.iter().map(|d| d.blocks).sum();
        if n == 0 {
            f64::NAN
        } else {
            ok as f64 / n as f64
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: MetricsReport,
    pub predictions: Vec<Raster>,
}

pub fn run_scenario(scene: &Scene, cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let days = resolve_eval_days(scene, &cfg.eval_days)?;
    log::info!("{}: {} evaluation days", cfg.scenario, days.len());
    let mut report = MetricsReport {
        scenario: cfg.scenario,
        days: Vec::new(),
        failures: Vec::new(),
        pixel_mean_error: None,
        pixel_error_sd: None,
    };
    let mut predictions = Vec::new();
    for (t, out) in run_days(scene, cfg, None, &days)? {
        match out {
            Ok(o) => {
                report.days.push(o.metrics);
                predictions.push(o.prediction);
            }
            Err(e) => report.failures.push(DayFailure {
                day: t,
                error: e.to_string(),
            }),
        }
    }
    if let Some(first) = predictions.first() {
        let n = first.values().len();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for p in &predictions {
            let truth = scene.day(p.day)?.sm_truth.values();
            for i in 0..n {
                let e = (p.values()[i] - truth[i]).abs();
                sum[i] += e;
                sq[i] += e * e;
            }
        }
        let k = predictions.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
        let sd: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / k - m * m).max(0.0).sqrt()).collect();
        let (h, w) = (first.height, first.width);
        report.pixel_mean_error = Some(Raster::new(Variable::SM, first.resolution_m, 0, h, w, mean)?);
        report.pixel_error_sd = Some(Raster::new(Variable::SM, first.resolution_m, 0, h, w, sd)?);
    }
    Ok(ScenarioRun { report, predictions })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_text(path, &(text + "\n"))
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const DAILY_HEADER: &str = "day,doy,rmse,mean_abs_error,frac_error_gt_0.04,consistent_blocks,blocks,n_train_rows,n_active,\
n_corn,rmse_corn,n_cotton,rmse_cotton,n_bare_a,rmse_bare_a,n_bare_b,rmse_bare_b,n_bare_c,rmse_bare_c";

pub fn daily_metrics_csv(days: &[DayMetrics]) -> String {
    let mut s = String::from(DAILY_HEADER);
    s.push('\n');
    for d in days {
        write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            d.day,
            d.doy,
            d.rmse,
            d.mean_abs_error,
            d.frac_large_error,
            d.consistent_blocks,
            d.blocks,
            d.n_train_rows,
            d.n_active
        )
        .unwrap();
        for st in Stratum::ALL {
            write!(s, ",{},{}", d.strata.count(st), opt(d.strata.rmse(st))).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn strata_csv(t: &StrataTable) -> String {
    let mut s = String::from("stratum,pixel_days,rmse\n");
    for st in Stratum::ALL {
        writeln!(s, "{st},{},{}", t.count(st), opt(t.rmse(st))).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub days_evaluated: usize,
    pub days_failed: usize,
    pub regional_rmse: Option<f64>,
    pub daily_rmse_sd: Option<f64>,
    pub time_averaged_error: Option<f64>,
    pub time_averaged_error_sd: Option<f64>,
    pub coarse_consistency: Option<f64>,
    pub strata_rmse: Vec<(String, Option<f64>)>,
}

impl MetricsReport {
    pub fn summary(&self) -> Summary {
        let t = self.strata();
        let (e, sd) = self.time_averaged_error();
        Summary {
            scenario: self.scenario,
            days_evaluated: self.days.len(),
            days_failed: self.failures.len(),
            regional_rmse: finite(self.regional_rmse()),
            daily_rmse_sd: finite(self.daily_rmse_sd()),
            time_averaged_error: finite(e),
            time_averaged_error_sd: finite(sd),
            coarse_consistency: finite(self.consistency_fraction()),
            strata_rmse: Stratum::ALL.iter().map(|s| (s.to_string(), t.rmse(*s))).collect(),
        }
    }
}

/// Writes rasters, metric CSVs and the summary of a run under `dir`.
pub fn write_run(run: &ScenarioRun, dir: &Path) -> Result<()> {
    let rdir = dir.join("rasters");
    std::fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
    for p in &run.predictions {
        write_tdr(p, &rdir.join(format!("SM_{}_{:04}.csv", p.resolution_m, p.day)))?;
    }
    let r = &run.report;
    write_text(&dir.join("daily_metrics.csv"), &daily_metrics_csv(&r.days))?;
    write_text(&dir.join("strata.csv"), &strata_csv(&r.strata()))?;
    let mut f = String::from("day,error\n");
    for x in &r.failures {
        writeln!(f, "{},\"{}\"", x.day, x.error.replace('"', "'")).unwrap();
    }
    write_text(&dir.join("failures.csv"), &f)?;
    if let Some(m) = &r.pixel_mean_error {
        write_tdr(m, &dir.join("pixel_mean_abs_error.csv"))?;
    }
    if let Some(s) = &r.pixel_error_sd {
        write_tdr(s, &dir.join("pixel_abs_error_sd.csv"))?;
    }
    write_json(&dir.join("summary.json"), &r.summary())
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagVariable {
    LST,
    LAI,
    PPT,
    /// All three windows at once.
    All,
}

impl std::str::FromStr for LagVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lst" => Ok(LagVariable::LST),
            "lai" => Ok(LagVariable::LAI),
            "ppt" => Ok(LagVariable::PPT),
            "all" => Ok(LagVariable::All),
            _ => Err(Error::Argument(format!("unknown lag variable {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagPoint {
    pub lag: u32,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub mean_abs_error: f64,
}

fn all_days_ok(results: Vec<(u32, Result<DayOutcome>)>) -> Result<Vec<DayOutcome>> {
    results.into_iter().map(|(_, r)| r).collect()
}

/// Varies one lag window over `grid` with the others held at the configured schema.
pub fn lag_sensitivity_sweep(
    scene: &Scene,
    cfg: &ScenarioConfig,
    variable: LagVariable,
    grid: &[u32],
) -> Result<Vec<LagPoint>> {
    cfg.validate()?;
    let base = cfg.schema();
    if base.mode != Mode::Spatiotemporal {
        return Err(Error::Config("lag sweeps need a spatio-temporal schema".into()));
    }
    let days = resolve_eval_days(scene, &cfg.eval_days)?;
    grid.iter()
        .map(|&lag| {
            let mut schema = base;
            match variable {
                LagVariable::LST => schema.d1 = lag,
                LagVariable::LAI => schema.d2 = lag,
                LagVariable::PPT => schema.d3 = lag,
                LagVariable::All => (schema.d1, schema.d2, schema.d3) = (lag, lag, lag),
            }
            if let Some(&t) = days.iter().find(|&&t| t <= schema.max_lag()) {
                return Err(Error::Availability(format!("lag {lag} exceeds the history before day {t}")));
            }
            let c = ScenarioConfig {
                schema: Some(schema),
                ..cfg.clone()
            };
            let out = all_days_ok(run_days(scene, &c, None, &days)?)?;
            let rmse: Vec<f64> = out.iter().map(|o| o.metrics.rmse).collect();
            let mae: Vec<f64> = out.iter().map(|o| o.metrics.mean_abs_error).collect();
            let (m, sd) = metrics::mean_sd(&rmse);
            Ok(LagPoint {
                lag,
                mean_rmse: m,
                sd_rmse: sd,
                mean_abs_error: metrics::mean_sd(&mae).0,
            })
        })
        .collect()
}

pub fn lag_csv(points: &[LagPoint]) -> String {
    let mut s = String::from("lag,mean_rmse,sd_rmse,mean_abs_error\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.lag, p.mean_rmse, p.sd_rmse, p.mean_abs_error).unwrap();
    }
    s
}

/// Coarse-SM day of `year` whose 200 m land cover mixes the most classes
/// (then the highest class entropy), ties going to the day nearest DoY 222.
pub fn max_heterogeneity_day(scene: &Scene, year: u32) -> Result<u32> {
    let lo = (year.max(1) - 1) * DAYS_PER_YEAR + 1;
    let hi = year * DAYS_PER_YEAR;
    let mut best: Option<((usize, i64, i64), u32)> = None;
    for t in scene.coarse_days().into_iter().filter(|d| (lo..=hi).contains(d)) {
        let lc = scene.lc_fine_at(t)?;
        let mut counts = [0usize; 3];
        for &v in lc.values() {
            counts[v as usize] += 1;
        }
        let n = lc.values().len() as f64;
        let classes = counts.iter().filter(|&&c| c > 0).count();
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        let dist = (doy(t) as i64 - HETEROGENEITY_REFERENCE_DOY as i64).abs();
        let key = (classes, (entropy * 1e9).round() as i64, -dist);
        if best.is_none_or(|(k, _)| key > k) {
            best = Some((key, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::Availability(format!("no coarse SM days in year {year}")))
}

/// Day used by single-day experiments: the only configured day, or the most
/// heterogeneous day of the last scene year.
pub fn experiment_day(scene: &Scene, cfg: &ScenarioConfig) -> Result<u32> {
    match &cfg.eval_days {
        EvalDays::Days(d) if d.len() == 1 => Ok(d[0]),
        _ => max_heterogeneity_day(scene, scene.n_days.div_ceil(DAYS_PER_YEAR)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPoint {
    pub gaps: u32,
    pub mean_abs_error: f64,
    pub rmse: f64,
    pub frac_large_error: f64,
}

#[derive(Debug, Clone)]
pub struct GapRun {
    pub day: u32,
    pub points: Vec<GapPoint>,
    pub predictions: Vec<Raster>,
}

/// Retrains with LST withheld on the `g` most recent days, g = 0..=max_gaps.
pub fn gap_experiment(scene: &Scene, cfg: &ScenarioConfig, max_gaps: u32) -> Result<GapRun> {
    cfg.validate()?;
    let schema = cfg.schema();
    if schema.mode != Mode::Spatiotemporal {
        return Err(Error::Config("the gap experiment needs a spatio-temporal schema".into()));
    }
    if max_gaps > schema.d1 {
        return Err(Error::Argument(format!(
            "{max_gaps} gaps exceed the LST window of {} days",
            schema.d1
        )));
    }
    let t = experiment_day(scene, cfg)?;
    let masks: Vec<GapMask> = (0..=max_gaps)
        .map(|g| GapMask::consecutive(schema.d1, g))
        .collect::<Result<_>>()?;
    let outs: Vec<DayOutcome> = masks
        .par_iter()
        .map(|m| {
            let (_, r) = run_days(scene, cfg, Some(m), &[t])?.pop().expect("one day");
            r
        })
        .collect::<Result<_>>()?;
    let points = outs
        .iter()
        .zip(0..)
        .map(|(o, g)| GapPoint {
            gaps: g,
            mean_abs_error: o.metrics.mean_abs_error,
            rmse: o.metrics.rmse,
            frac_large_error: o.metrics.frac_large_error,
        })
        .collect();
    Ok(GapRun {
        day: t,
        points,
        predictions: outs.into_iter().map(|o| o.prediction).collect(),
    })
}

pub fn gap_csv(points: &[GapPoint]) -> String {
    let mut s = String::from("gaps,mean_abs_error,rmse,frac_error_gt_0.04\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.gaps, p.mean_abs_error, p.rmse, p.frac_large_error).unwrap();
    }
    s
}

pub fn write_gap_run(run: &GapRun, dir: &Path) -> Result<()> {
    write_text(&dir.join("gaps.csv"), &gap_csv(&run.points))?;
    let rdir = dir.join("rasters");
    std::fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
    for (g, p) in run.predictions.iter().enumerate() {
        write_tdr(p, &rdir.join(format!("SM_{}_{:04}_gap{g}.csv", p.resolution_m, p.day)))?;
    }
    Ok(())
}

/// Training rows of the experiment day, for the CV and λ sweeps.
pub fn experiment_training_set(scene: &Scene, cfg: &ScenarioConfig) -> Result<(u32, FeatureMatrix, Vec<f64>)> {
    let t = experiment_day(scene, cfg)?;
    let (x, y) = assemble_training(scene, &cfg.selection(scene)?, &cfg.schema(), t, None)?;
    Ok((t, x, y))
}

/// `folds`-fold CV error of bags of each size in `k_grid`.
pub fn sweep_trees(scene: &Scene, cfg: &ScenarioConfig, k_grid: &[usize], folds: usize) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    let (_, x, y) = experiment_training_set(scene, cfg)?;
    cross_validate_treecount(&x, &y, k_grid, folds, &cfg.fit, seed::derive(cfg.seed, "cv", 0))
}

pub fn trees_csv(points: &[(usize, f64)]) -> String {
    let mut s = String::from("n_trees,cv_rmse\n");
    for (k, e) in points {
        writeln!(s, "{k},{e}").unwrap();
    }
    s
}

/// Pruning path over `n_betas` log-spaced penalties (plus zero).
pub fn sweep_lambda(scene: &Scene, cfg: &ScenarioConfig, n_betas: usize) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let (t, x, y) = experiment_training_set(scene, cfg)?;
    let bag = fit_bagged(&x, &y, cfg.n_trees, &cfg.fit, seed::derive(cfg.seed, "trees", t as u64))?;
    let grid = default_beta_grid(&bag, &x, &y, n_betas)?;
    beta_sweep(&bag, &x, &y, &grid)
}

pub fn lambda_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("lambda,beta,n_active,resub_error\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.lambda, p.beta, p.n_active, p.resub_error).unwrap();
    }
    s
}

/// Collects `summary.json` from `dir` and its immediate subdirectories into one table.
pub fn report(dir: &Path) -> Result<String> {
    let mut found: Vec<(PathBuf, Summary)> = Vec::new();
    let mut candidates = vec![dir.to_path_buf()];
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    candidates.extend(subdirs);
    for c in candidates {
        let p = c.join("summary.json");
        if p.is_file() {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let s: Summary = serde_json::from_str(&text).map_err(|e| Error::json(&p, e))?;
            found.push((c, s));
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!("no summary.json under {}", dir.display())));
    }
    let mut out = String::from(
        "run,scenario,days,failed,regional_rmse,daily_rmse_sd,time_averaged_error,time_averaged_error_sd,coarse_consistency",
    );
    for st in Stratum::ALL {
        write!(out, ",rmse_{st}").unwrap();
    }
    out.push('\n');
    for (path, s) in &found {
        let name = path.strip_prefix(dir).ok().map(|p| p.display().to_string()).unwrap_or_default();
        write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            if name.is_empty() { "." } else { &name },
            s.scenario,
            s.days_evaluated,
            s.days_failed,
            opt(s.regional_rmse),
            opt(s.daily_rmse_sd),
            opt(s.time_averaged_error),
            opt(s.time_averaged_error_sd),
            opt(s.coarse_consistency)
        )
        .unwrap();
        for (_, v) in &s.strata_rmse {
            write!(out, ",{}", opt(*v)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
