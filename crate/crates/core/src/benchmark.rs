//! Selectivity benchmark over datasets and explainers, and report persistence.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attrib::{AttributionMethod, MethodId};
use crate::config::RunConfig;
use crate::image::{grid_segmentation, AttributionMap, SegmentMap, HEIGHT, WIDTH};
use crate::par::{mean, Exec};
use crate::recognizer::{decode, load_model, Recognizer};
use crate::rng::sub_seed;
use crate::selectivity::{
    global_attribution, query_best, selectivity_curves, CurvePair, MethodRanking, Metric,
};
use crate::strexp::{assemble, local_explanations, resolve_base, StrExpConfig, StrExpMode};
use crate::synth::{load_dataset, Dataset, Sample};
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "seqattr-benchmark/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub dataset: String,
    pub metric: Metric,
    pub auc: f64,
    pub n_images: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCurves {
    pub index: usize,
    pub label: String,
    pub prediction: String,
    /// One entry per explainer, in report order.
    pub curves: Vec<(String, CurvePair)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub n_images: usize,
    /// Base method used by the combined explainers.
    pub base_method: Option<MethodId>,
    /// Calibration ranking when the base method was queried.
    pub ranking: Option<MethodRanking>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub images: Option<Vec<ImageCurves>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: String,
    pub config: RunConfig,
    pub explainers: Vec<String>,
    pub datasets: Vec<DatasetReport>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, method: &str, dataset: &str, metric: Metric) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.dataset == dataset && r.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,metric,auc,n_images,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.dataset, r.metric, r.auc, r.n_images, r.seed
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkOptions {
    pub exec: Exec,
    /// Keep per-image curves in the report.
    pub curves: bool,
}

/// An evaluation set and the calibration set used to pick its base method.
pub struct BenchmarkData {
    pub eval: Dataset,
    pub calibration: Option<Dataset>,
}

fn explainer_names(cfg: &RunConfig) -> Vec<String> {
    cfg.methods
        .iter()
        .map(|m| m.name().to_string())
        .chain(cfg.strexp_modes.iter().map(|m| m.name().to_string()))
        .collect()
}

fn strexp_config(cfg: &RunConfig, mode: StrExpMode) -> StrExpConfig {
    StrExpConfig {
        mode,
        base_method: cfg.base_method,
        normalization: cfg.normalization,
        include_blank_slots: cfg.include_blank_slots,
        params: cfg.params.clone(),
        query_metric: cfg.query_metric,
    }
}

fn candidates(cfg: &RunConfig) -> Vec<MethodId> {
    if cfg.methods.is_empty() {
        MethodId::ALL.to_vec()
    } else {
        cfg.methods.clone()
    }
}

/// Curves of every explainer on image `index`.
fn evaluate_image(
    model: &dyn Recognizer,
    cfg: &RunConfig,
    seg: &SegmentMap,
    base: Option<MethodId>,
    index: usize,
    sample: &Sample,
) -> Result<(String, Vec<CurvePair>)> {
    let pred = decode(&model.forward(&sample.image)?);
    let mut curves = Vec::new();
    let mut globals: Vec<(MethodId, AttributionMap)> = Vec::new();
    for &id in &cfg.methods {
        let method = AttributionMethod::with_params(id, cfg.params.clone());
        let map = global_attribution(model, &method, index, sample, &pred, seg, cfg.baseline)?;
        curves.push(selectivity_curves(model, sample, &map, seg, cfg.baseline)?);
        globals.push((id, map));
    }
    if let Some(base) = base {
        let method = AttributionMethod::with_params(base, cfg.params.clone())
            .with_seed(sub_seed(cfg.params.seed, index as u64));
        let global = if cfg.strexp_modes.contains(&StrExpMode::GL) {
            match globals.iter().find(|(id, _)| *id == base) {
                Some((_, map)) => Some(map.clone()),
                None => Some(global_attribution(
                    model,
                    &AttributionMethod::with_params(base, cfg.params.clone()),
                    index,
                    sample,
                    &pred,
                    seg,
                    cfg.baseline,
                )?),
            }
        } else {
            None
        };
        let locals = local_explanations(
            model,
            &sample.image,
            &method,
            seg,
            cfg.baseline,
            cfg.include_blank_slots,
        )?;
        for &mode in &cfg.strexp_modes {
            let (map, _, _) = assemble(
                model,
                &sample.image,
                &pred,
                &method,
                mode,
                global.clone(),
                locals.clone(),
                seg,
                cfg.baseline,
                cfg.normalization,
            )?;
            curves.push(selectivity_curves(model, sample, &map, seg, cfg.baseline)?);
        }
    }
    Ok((pred.text, curves))
}

/// Run the benchmark on in-memory data.
pub fn run_benchmark(
    model: &dyn Recognizer,
    data: &[BenchmarkData],
    cfg: &RunConfig,
    opts: BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let seg = grid_segmentation(HEIGHT, WIDTH, cfg.cell)?;
    let names = explainer_names(cfg);
    let mut datasets = Vec::new();
    let mut rows = Vec::new();
    for d in data {
        let samples = &d.eval.samples;
        if samples.is_empty() {
            return Err(Error::InvalidValue(format!(
                "dataset {} is empty",
                d.eval.name
            )));
        }
        let (base, ranking) = if cfg.strexp_modes.is_empty() {
            (None, None)
        } else {
            let sc = strexp_config(cfg, StrExpMode::GL);
            let calib = d.calibration.as_ref().map(|c| c.samples.as_slice());
            let (b, r) = resolve_base(
                model,
                &sc,
                &candidates(cfg),
                &seg,
                cfg.baseline,
                calib,
                opts.exec,
            )?;
            (Some(b), r)
        };
        let per_image = opts.exec.try_map_range(samples.len(), |i| {
            evaluate_image(model, cfg, &seg, base, i, &samples[i])
        })?;
        for (e, name) in names.iter().enumerate() {
            for &metric in &cfg.metrics {
                let aucs: Vec<f64> = per_image
                    .iter()
                    .map(|(_, c)| c[e].get(metric).auc)
                    .collect();
                rows.push(BenchmarkRow {
                    method: name.clone(),
                    dataset: d.eval.name.clone(),
                    metric,
                    auc: mean(&aucs),
                    n_images: samples.len(),
                    seed: cfg.params.seed,
                });
            }
        }
        let images = opts.curves.then(|| {
            per_image
                .into_iter()
                .enumerate()
                .map(|(index, (prediction, curves))| ImageCurves {
                    index,
                    label: samples[index].label.clone(),
                    prediction,
                    curves: names.iter().cloned().zip(curves).collect(),
                })
                .collect()
        });
        datasets.push(DatasetReport {
            name: d.eval.name.clone(),
            n_images: samples.len(),
            base_method: base,
            ranking,
            images,
        });
    }
    Ok(BenchmarkReport {
        schema: REPORT_SCHEMA.to_string(),
        config: cfg.clone(),
        explainers: names,
        datasets,
        rows,
    })
}

fn load_limited(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let mut d = load_dataset(path)?;
    if let Some(n) = limit {
        d.samples.truncate(n);
    }
    Ok(d)
}

/// Load every evaluation set (and its calibration set when the base method is queried).
pub fn load_data(cfg: &RunConfig, with_calibration: bool) -> Result<Vec<BenchmarkData>> {
    cfg.datasets
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let calibration = match cfg.calibration_for(i) {
                Some(c) if with_calibration => Some(load_limited(c, cfg.limit)?),
                _ => None,
            };
            Ok(BenchmarkData {
                eval: load_limited(path, cfg.limit)?,
                calibration,
            })
        })
        .collect()
}

/// Load model and data named by `cfg` and run the benchmark.
pub fn run_from_config(cfg: &RunConfig, opts: BenchmarkOptions) -> Result<BenchmarkReport> {
    let model = load_model(&cfg.model)?;
    let need_calibration =
        !cfg.strexp_modes.is_empty() && cfg.base_method == crate::strexp::BaseMethod::Auto;
    let data = load_data(cfg, need_calibration)?;
    run_benchmark(&model, &data, cfg, opts)
}

/// Per-dataset method ranking on the evaluation sets, or on the calibration
/// sets when `calibration` is set. Scores use `cfg.query_metric` and the same
/// per-image seeds as the benchmark, so they equal its rows.
pub fn rank_methods(
    model: &dyn Recognizer,
    cfg: &RunConfig,
    calibration: bool,
    exec: Exec,
) -> Result<Vec<(String, MethodRanking)>> {
    let seg = grid_segmentation(HEIGHT, WIDTH, cfg.cell)?;
    let methods: Vec<AttributionMethod> = candidates(cfg)
        .into_iter()
        .map(|id| AttributionMethod::with_params(id, cfg.params.clone()))
        .collect();
    load_data(cfg, calibration)?
        .into_iter()
        .map(|d| {
            let set = if calibration {
                d.calibration
                    .ok_or_else(|| Error::Missing("no calibration set configured".into()))?
            } else {
                d.eval
            };
            let ranking = query_best(
                model,
                &set.samples,
                &methods,
                &seg,
                cfg.baseline,
                cfg.query_metric,
                exec,
            )?;
            Ok((set.name, ranking))
        })
        .collect()
}

/// Write `bytes` to a temporary sibling of `path` and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidValue(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Write `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let csv = dir.join("report.csv");
    write_atomic(&json, report.to_json()?.as_bytes())?;
    write_atomic(&csv, report.to_csv().as_bytes())?;
    Ok((json, csv))
}
