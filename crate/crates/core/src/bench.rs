//! Mismatch scenarios, method orchestration and result tables.
//!
//! Scenario names follow the usual naming of the radio-map mismatch
//! experiments, but the "IRT2" side is our own simulator run with perturbed
//! parameters, not a ray tracer:
//!
//! | name               | localizer maps | measurements                  |
//! |--------------------|----------------|-------------------------------|
//! | `SIM-DPM`          | base model     | base model                    |
//! | `SIM-DPM2IRT`      | base model     | perturbed model               |
//! | `SIM-DPM2IRT-CARS` | base model     | perturbed model, extra cars   |
//!
//! Numbers produced here are not comparable with published full-scale
//! results.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm_sim::{
    gray_to_pathloss, measure_rss, pathloss_to_gray, perturb_scene, simulate, simulate_radio_map,
    RadioMap, SimParams, ToAMap,
};
use crate::error::{Error, Result};
use crate::fingerprint::{
    adaptive_knn_localize, build_fingerprint_db, knn_localize, Fingerprint, FingerprintDb,
};
use crate::grid::{Pixel, Point};
use crate::heatloc::{
    analytic_localize, locnet_train_from, HeatmapMode, LocNetModel, Provenance, Sample,
    TrainConfig, TrainLogRow, TrainOutcome,
};
use crate::ranging::{
    correntropy_localize, gtrs_bisection_localize, pocs_localize, rss_log_distance_localize,
    toa_to_instance, CorrentropyConfig, GtrsConfig, LogDistanceModel, PocsConfig, RangingInstance,
};
use crate::rng;
use crate::scene::{Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "SIM-DPM")]
    SimDpm,
    #[serde(rename = "SIM-DPM2IRT")]
    SimDpm2Irt,
    #[serde(rename = "SIM-DPM2IRT-CARS")]
    SimDpm2IrtCars,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 3] = [Self::SimDpm, Self::SimDpm2Irt, Self::SimDpm2IrtCars];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SimDpm => "SIM-DPM",
            Self::SimDpm2Irt => "SIM-DPM2IRT",
            Self::SimDpm2IrtCars => "SIM-DPM2IRT-CARS",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown scenario {s:?}; expected SIM-DPM, SIM-DPM2IRT or SIM-DPM2IRT-CARS"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub map_source_params: SimParams,
    pub meas_source_params: SimParams,
    /// Car obstacles added on the measurement side only.
    pub cars: usize,
    /// Std of Gaussian gray-level noise on the localizer's radio maps.
    pub map_noise_gray: f64,
    /// Std of Gaussian noise on RSS measurements (dB).
    pub meas_noise_db: f64,
    /// Std of Gaussian ToA noise (s).
    pub toa_noise_s: f64,
}

pub const DEFAULT_CARS: usize = 40;
pub const DEFAULT_MAP_NOISE_GRAY: f64 = 0.01;

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        let (meas, cars) = match name {
            ScenarioName::SimDpm => (SimParams::base(), 0),
            ScenarioName::SimDpm2Irt => (SimParams::perturbed(), 0),
            ScenarioName::SimDpm2IrtCars => (SimParams::perturbed(), DEFAULT_CARS),
        };
        Self {
            name,
            map_source_params: SimParams::base(),
            meas_source_params: meas,
            cars,
            map_noise_gray: DEFAULT_MAP_NOISE_GRAY,
            meas_noise_db: 0.0,
            toa_noise_s: 0.0,
        }
    }

    /// Same scenario with every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.map_noise_gray = 0.0;
        self.meas_noise_db = 0.0;
        self.toa_noise_s = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.map_source_params.validate()?;
        self.meas_source_params.validate()?;
        if self.name == ScenarioName::SimDpm && self.map_source_params != self.meas_source_params {
            return Err(Error::invalid(
                "SIM-DPM uses identical map and measurement parameters",
            ));
        }
        if self.name == ScenarioName::SimDpm2IrtCars && self.cars == 0 {
            return Err(Error::invalid("SIM-DPM2IRT-CARS needs cars > 0"));
        }
        for (what, v) in [
            ("map_noise_gray", self.map_noise_gray),
            ("meas_noise_db", self.meas_noise_db),
            ("toa_noise_s", self.toa_noise_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{what} must be a finite non-negative number"
                )));
            }
        }
        Ok(())
    }
}

fn params_tag(p: &SimParams) -> &'static str {
    if *p == SimParams::base() {
        "base"
    } else if *p == SimParams::perturbed() {
        "perturbed"
    } else {
        "custom"
    }
}

/// A localization instance with everything any method may consume.
#[derive(Debug, Clone)]
pub struct BenchSample {
    pub sample: Sample,
    /// Ranges from measurement-side ToA maps; anchors and truth in meters.
    pub toa: RangingInstance,
}

/// Per-scene state shared by that scene's samples.
struct SceneData {
    id: usize,
    sample_seed: u64,
    city: Arc<crate::scene::CityMap>,
    bs: Vec<Pixel>,
    ue: Vec<Pixel>,
    maps_est: Arc<[RadioMap]>,
    meas_maps: Vec<RadioMap>,
    meas_toa: Vec<ToAMap>,
    provenance: Provenance,
}

fn add_map_noise(map: &RadioMap, std: f64, seed: u64) -> Result<RadioMap> {
    if std == 0.0 {
        return Ok(map.clone());
    }
    let normal =
        Normal::new(0.0, std).map_err(|e| Error::invalid(format!("map noise {std}: {e}")))?;
    let mut r = rng::seeded(seed);
    let pl = map
        .gray
        .map(|&g| gray_to_pathloss((g + normal.sample(&mut r)).clamp(0.0, 1.0), &map.params));
    Ok(RadioMap::from_pathloss(map.tx, pl, map.params))
}

fn load_scene_data(
    dataset: &Dataset,
    scenario: &Scenario,
    id: usize,
    seed: u64,
) -> Result<SceneData> {
    let scene = dataset.load_scene(id)?;
    let stored = dataset.manifest.sim_params;
    let scene_seed = rng::derive(seed, "bench-scene", id as u64);

    let clean: Vec<RadioMap> = if scenario.map_source_params == stored {
        dataset.load_radio_maps(id)?
    } else {
        scene
            .bs
            .iter()
            .map(|&b| simulate_radio_map(&scene.city, b, &scenario.map_source_params))
            .collect::<Result<_>>()?
    };
    let maps_est: Vec<RadioMap> = clean
        .iter()
        .enumerate()
        .map(|(j, m)| {
            add_map_noise(
                m,
                scenario.map_noise_gray,
                rng::derive(scene_seed, "map-noise", j as u64),
            )
        })
        .collect::<Result<_>>()?;

    let (meas_maps, meas_toa) = if scenario.meas_source_params == stored && scenario.cars == 0 {
        (dataset.load_radio_maps(id)?, dataset.load_toa_maps(id)?)
    } else {
        let meas_city = if scenario.cars > 0 {
            perturb_scene(
                &scene.city,
                rng::derive(scene_seed, "cars", 0),
                scenario.cars,
            )?
        } else {
            scene.city.clone()
        };
        scene
            .bs
            .iter()
            .map(|&b| simulate(&meas_city, b, &scenario.meas_source_params))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    };

    let mut meas_model = params_tag(&scenario.meas_source_params).to_string();
    if scenario.cars > 0 {
        meas_model.push_str(&format!("+cars{}", scenario.cars));
    }
    Ok(SceneData {
        id,
        sample_seed: rng::derive(scene_seed, "samples", 0),
        city: Arc::new(scene.city),
        bs: scene.bs,
        ue: scene.ue,
        maps_est: maps_est.into(),
        meas_maps,
        meas_toa,
        provenance: Provenance {
            map_model: params_tag(&scenario.map_source_params).to_string(),
            meas_model,
        },
    })
}

fn scene_samples(
    data: &SceneData,
    scenario: &Scenario,
    max_ue: Option<usize>,
) -> Result<Vec<BenchSample>> {
    let count = max_ue.map_or(data.ue.len(), |m| m.min(data.ue.len()));
    (0..count)
        .map(|u| {
            let ue = data.ue[u];
            let seed = rng::derive(data.sample_seed, "ue", u as u64);
            let p_meas = data
                .meas_maps
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let pl = measure_rss(
                        m,
                        ue,
                        scenario.meas_noise_db,
                        rng::derive(seed, "rss", j as u64),
                    )?;
                    Ok(pathloss_to_gray(pl, &m.params))
                })
                .collect::<Result<Vec<f64>>>()?;
            let sample = Sample {
                scene_id: data.id,
                ue_id: u,
                city: Arc::clone(&data.city),
                bs: data.bs.clone(),
                radio_maps_est: Arc::clone(&data.maps_est),
                p_meas,
                truth: ue,
                provenance: data.provenance.clone(),
            };
            let toa = toa_to_instance(
                &data.meas_toa,
                ue,
                scenario.toa_noise_s,
                rng::derive(seed, "toa", 0),
            )?;
            Ok(BenchSample { sample, toa })
        })
        .collect()
}

/// Samples for every scene of `split`; `max_ue` caps UEs per scene.
pub fn build_samples(
    dataset: &Dataset,
    scenario: &Scenario,
    split: Split,
    seed: u64,
    max_ue: Option<usize>,
) -> Result<Vec<BenchSample>> {
    scenario.validate()?;
    let per_scene: Vec<Vec<BenchSample>> = dataset
        .manifest
        .split_ids(split)
        .into_par_iter()
        .map(|id| {
            let data = load_scene_data(dataset, scenario, id, seed).map_err(|e| Error::Scene {
                scene: id,
                source: Box::new(e),
            })?;
            scene_samples(&data, scenario, max_ue)
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Knn,
    Aknn,
    Heatmap,
    Locunet,
    Pocs,
    Gtrs,
    Correntropy,
    RssLateration,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Self::Knn,
        Self::Aknn,
        Self::Heatmap,
        Self::Locunet,
        Self::Pocs,
        Self::Gtrs,
        Self::Correntropy,
        Self::RssLateration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Knn => "knn",
            Self::Aknn => "aknn",
            Self::Heatmap => "heatmap",
            Self::Locunet => "locunet",
            Self::Pocs => "pocs",
            Self::Gtrs => "gtrs",
            Self::Correntropy => "correntropy",
            Self::RssLateration => "rss-lateration",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// Hyperparameters of every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodParams {
    pub knn_k: usize,
    pub aknn_alpha: f64,
    pub aknn_k_max: usize,
    pub fingerprint_stride: usize,
    pub heatmap_sigma: f64,
    pub heatmap_mode: HeatmapMode,
    pub checkpoint: Option<PathBuf>,
    pub pocs: PocsConfig,
    pub gtrs: GtrsConfig,
    pub correntropy: CorrentropyConfig,
    /// Log-distance model for RSS lateration; defaults to the map-side
    /// parameters of the scenario.
    pub lateration_model: Option<LogDistanceModel>,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            knn_k: 5,
            aknn_alpha: 1.1,
            aknn_k_max: 8,
            fingerprint_stride: 1,
            heatmap_sigma: 0.05,
            heatmap_mode: HeatmapMode::Com,
            checkpoint: None,
            pocs: PocsConfig::default(),
            gtrs: GtrsConfig::default(),
            correntropy: CorrentropyConfig::default(),
            lateration_model: None,
        }
    }
}

impl MethodParams {
    pub fn summary(&self, m: Method) -> String {
        match m {
            Method::Knn => format!("k={} stride={}", self.knn_k, self.fingerprint_stride),
            Method::Aknn => format!(
                "alpha={} k_max={} stride={}",
                self.aknn_alpha, self.aknn_k_max, self.fingerprint_stride
            ),
            Method::Heatmap => {
                format!("sigma={} mode={:?}", self.heatmap_sigma, self.heatmap_mode).to_lowercase()
            }
            Method::Locunet => self
                .checkpoint
                .as_ref()
                .and_then(|p| p.file_name())
                .map_or_else(
                    || "checkpoint=?".into(),
                    |f| format!("checkpoint={}", f.to_string_lossy()),
                ),
            Method::Pocs => format!(
                "relax={} max_iter={}",
                self.pocs.relaxation, self.pocs.max_iter
            ),
            Method::Gtrs => format!("tol={:e}", self.gtrs.tol),
            Method::Correntropy => format!("sigma={}m", self.correntropy.sigma_m),
            Method::RssLateration => match &self.lateration_model {
                Some(m) => format!("l0={} n={}", m.l0_db, m.path_exponent),
                None => "map-params".into(),
            },
        }
    }
}

/// Per-sample outcome of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: usize,
    pub ue_id: usize,
    pub method: Method,
    pub est_x_m: f64,
    pub est_y_m: f64,
    pub error_m: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub params: String,
    pub mae_m: f64,
    pub mean_runtime_ms: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub split: Split,
    pub max_ue_per_scene: Option<usize>,
    /// Sequential evaluation with wall-clock timing; when false samples are
    /// processed in parallel and runtimes are reported as 0.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            split: Split::Test,
            max_ue_per_scene: None,
            timing: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub rows: Vec<ResultRow>,
    pub records: Vec<SampleRecord>,
}

/// Method state prepared once per run (loaded model) or per scene (databases).
struct Prepared {
    model: Option<LocNetModel>,
    dbs: Vec<(usize, FingerprintDb)>,
}

fn prepare(samples: &[BenchSample], methods: &[Method], params: &MethodParams) -> Result<Prepared> {
    let model = if methods.contains(&Method::Locunet) {
        let path = params
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::invalid("method locunet needs a checkpoint"))?;
        Some(LocNetModel::load(path)?)
    } else {
        None
    };
    let mut dbs = Vec::new();
    if methods
        .iter()
        .any(|m| matches!(m, Method::Knn | Method::Aknn))
    {
        let mut seen = BTreeSet::new();
        for s in samples {
            if seen.insert(s.sample.scene_id) {
                let db = build_fingerprint_db(
                    &s.sample.radio_maps_est,
                    &s.sample.city,
                    params.fingerprint_stride,
                )?;
                dbs.push((s.sample.scene_id, db));
            }
        }
    }
    Ok(Prepared { model, dbs })
}

/// Runs one method on one sample; returns the estimate in meters.
fn run_method(m: Method, s: &BenchSample, params: &MethodParams, prep: &Prepared) -> Result<Point> {
    let cell = s.sample.city.cell_m;
    let db = || {
        prep.dbs
            .iter()
            .find(|(id, _)| *id == s.sample.scene_id)
            .map(|(_, db)| db)
            .ok_or(Error::EmptyDatabase)
    };
    let fp = || Fingerprint::new(s.sample.p_meas.clone());
    Ok(match m {
        Method::Knn => knn_localize(db()?, &fp(), params.knn_k)?.scale(cell),
        Method::Aknn => adaptive_knn_localize(db()?, &fp(), params.aknn_alpha, params.aknn_k_max)?
            .location
            .scale(cell),
        Method::Heatmap => {
            analytic_localize(&s.sample, params.heatmap_sigma, params.heatmap_mode)?.scale(cell)
        }
        Method::Locunet => prep
            .model
            .as_ref()
            .expect("model loaded in prepare")
            .localize(&s.sample)?
            .scale(cell),
        Method::Pocs => pocs_localize(&s.toa, &params.pocs)?.estimate,
        Method::Gtrs => gtrs_bisection_localize(&s.toa, &params.gtrs)?.estimate,
        Method::Correntropy => correntropy_localize(&s.toa, &params.correntropy)?.estimate,
        Method::RssLateration => {
            let model = params.lateration_model.unwrap_or_else(|| {
                LogDistanceModel::from_params(&s.sample.radio_maps_est[0].params)
            });
            rss_log_distance_localize(&s.sample, &model)?.estimate
        }
    })
}

fn evaluate_sample(
    s: &BenchSample,
    methods: &[Method],
    params: &MethodParams,
    prep: &Prepared,
    timing: bool,
) -> Result<Vec<SampleRecord>> {
    let truth = s.sample.truth.to_meters(s.sample.city.cell_m);
    methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let est = run_method(m, s, params, prep).map_err(|e| {
                Error::invalid(format!(
                    "{m} failed on scene {} ue {}: {e}",
                    s.sample.scene_id, s.sample.ue_id
                ))
            })?;
            let runtime_ms = if timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            Ok(SampleRecord {
                scene_id: s.sample.scene_id,
                ue_id: s.sample.ue_id,
                method: m,
                est_x_m: est.x,
                est_y_m: est.y,
                error_m: est.dist(truth),
                runtime_ms,
            })
        })
        .collect()
}

/// Evaluates `methods` on pre-built samples. Every method sees exactly the
/// same samples.
pub fn evaluate_methods(
    scenario: &Scenario,
    samples: &[BenchSample],
    methods: &[Method],
    params: &MethodParams,
    timing: bool,
) -> Result<ScenarioRun> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let prep = prepare(samples, methods, params)?;
    let per_sample: Vec<Vec<SampleRecord>> = if timing {
        samples
            .iter()
            .map(|s| evaluate_sample(s, methods, params, &prep, true))
            .collect::<Result<_>>()?
    } else {
        samples
            .par_iter()
            .map(|s| evaluate_sample(s, methods, params, &prep, false))
            .collect::<Result<_>>()?
    };
    let records: Vec<SampleRecord> = per_sample.into_iter().flatten().collect();
    let rows = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.method == m).collect();
            let n = mine.len() as f64;
            ResultRow {
                scenario: scenario.name.to_string(),
                method: m.to_string(),
                params: params.summary(m),
                mae_m: mine.iter().map(|r| r.error_m).sum::<f64>() / n,
                mean_runtime_ms: mine.iter().map(|r| r.runtime_ms).sum::<f64>() / n,
                n_samples: mine.len(),
            }
        })
        .collect();
    Ok(ScenarioRun { rows, records })
}

/// Builds the samples of `opts.split` and evaluates every method on them.
/// Inputs (dataset files, checkpoint) are checked before any evaluation.
pub fn run_scenario(
    scenario: &Scenario,
    dataset: &Dataset,
    methods: &[Method],
    params: &MethodParams,
    opts: &RunOptions,
) -> Result<ScenarioRun> {
    scenario.validate()?;
    dataset.check_files()?;
    if methods.contains(&Method::Locunet) {
        match &params.checkpoint {
            Some(p) if p.is_file() => {}
            Some(p) => return Err(Error::MissingFile(p.clone())),
            None => return Err(Error::invalid("method locunet needs a checkpoint")),
        }
    }
    let samples = build_samples(
        dataset,
        scenario,
        opts.split,
        opts.seed,
        opts.max_ue_per_scene,
    )?;
    let run = evaluate_methods(scenario, &samples, methods, params, opts.timing)?;
    check_no_leakage(&run.records, dataset)?;
    Ok(run)
}

/// Training job as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub dataset: PathBuf,
    pub scenario: ScenarioName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_ue_per_scene: Option<usize>,
    #[serde(default)]
    pub map_noise_gray: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Trains a LocUNet on the train split and selects it on the val split,
/// with samples built under `scenario` (map- and measurement-side models as
/// at test time).
pub fn train_locnet(
    dataset: &Dataset,
    scenario: &Scenario,
    config: &TrainConfig,
    seed: u64,
    max_ue_per_scene: Option<usize>,
    on_epoch: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    dataset.check_files()?;
    let pick = |split| -> Result<Vec<Sample>> {
        Ok(
            build_samples(dataset, scenario, split, seed, max_ue_per_scene)?
                .into_iter()
                .map(|b| b.sample)
                .collect(),
        )
    };
    let model = LocNetModel::new(config.arch)?;
    locnet_train_from(
        model,
        &pick(Split::Train)?,
        &pick(Split::Val)?,
        config,
        on_epoch,
    )
}

/// Fails if any record comes from a training scene.
pub fn check_no_leakage(records: &[SampleRecord], dataset: &Dataset) -> Result<()> {
    let train: BTreeSet<usize> = dataset
        .manifest
        .split_ids(Split::Train)
        .into_iter()
        .collect();
    match records.iter().find(|r| train.contains(&r.scene_id)) {
        Some(r) => Err(Error::invalid(format!(
            "scene {} belongs to the training split",
            r.scene_id
        ))),
        None => Ok(()),
    }
}

/// Per-sample estimates and errors (deterministic; no timings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ErrorLine {
    scene_id: usize,
    ue_id: usize,
    method: Method,
    est_x_m: f64,
    est_y_m: f64,
    error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingLine {
    scene_id: usize,
    ue_id: usize,
    method: Method,
    runtime_ms: f64,
}

/// Writes `<stem>_errors.csv` (deterministic for a fixed scenario and seed)
/// and `<stem>_timings.csv`.
pub fn write_sample_records(
    dir: &Path,
    stem: &str,
    records: &[SampleRecord],
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let errors = dir.join(format!("{stem}_errors.csv"));
    let timings = dir.join(format!("{stem}_timings.csv"));
    let mut we = csv::Writer::from_path(&errors)?;
    let mut wt = csv::Writer::from_path(&timings)?;
    for r in records {
        we.serialize(ErrorLine {
            scene_id: r.scene_id,
            ue_id: r.ue_id,
            method: r.method,
            est_x_m: r.est_x_m,
            est_y_m: r.est_y_m,
            error_m: r.error_m,
        })?;
        wt.serialize(TimingLine {
            scene_id: r.scene_id,
            ue_id: r.ue_id,
            method: r.method,
            runtime_ms: r.runtime_ms,
        })?;
    }
    we.flush()?;
    wt.flush()?;
    Ok((errors, timings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// Rows grouped by scenario (first-appearance order), each group sorted by MAE.
fn grouped(rows: &[ResultRow]) -> Vec<(&str, Vec<&ResultRow>)> {
    let mut groups: Vec<(&str, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(s, _)| *s == r.scenario) {
            Some((_, g)) => g.push(r),
            None => groups.push((&r.scenario, vec![r])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|a, b| a.mae_m.total_cmp(&b.mae_m));
    }
    groups
}

pub fn report(rows: &[ResultRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("nothing to report"));
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for (_, g) in grouped(rows) {
                for r in g {
                    w.serialize(r)?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Text => {
            let mut out = String::new();
            for (scenario, g) in grouped(rows) {
                let _ = writeln!(out, "{scenario}");
                let _ = writeln!(
                    out,
                    "  {:<16} {:>10} {:>14} {:>8}  params",
                    "method", "MAE (m)", "run-time (ms)", "samples"
                );
                for r in g {
                    let _ = writeln!(
                        out,
                        "  {:<16} {:>10.3} {:>14.3} {:>8}  {}",
                        r.method, r.mae_m, r.mean_runtime_ms, r.n_samples, r.params
                    );
                }
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            for (scenario, g) in grouped(rows) {
                let _ = writeln!(out, "### {scenario}\n");
                let _ = writeln!(
                    out,
                    "| Method | Params | MAE (m) | Run-time (ms) | Samples |"
                );
                let _ = writeln!(out, "|---|---|---:|---:|---:|");
                for (i, r) in g.iter().enumerate() {
                    let (b, e) = if i == 0 { ("**", "**") } else { ("", "") };
                    let _ = writeln!(
                        out,
                        "| {b}{}{e} | {} | {b}{:.3}{e} | {:.3} | {} |",
                        r.method, r.params, r.mae_m, r.mean_runtime_ms, r.n_samples
                    );
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes `results.csv` and `tables.md` into `dir`.
pub fn write_report(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), report(rows, ReportFormat::Csv)?)?;
    std::fs::write(dir.join("tables.md"), report(rows, ReportFormat::Markdown)?)?;
    Ok(())
}
