//! Run configuration: `key = value` lines grouped under `[section]` headers.
//! `#` and `;` start comments. Relative paths resolve against the config file's directory.
//!
//! ```text
//! [model]
//! path = model.sxm
//!
//! [data]
//! datasets = data/clean, data/noisy
//! calibration = calib/clean, calib/noisy
//! limit = 200
//!
//! [segmentation]
//! cell = 8
//! baseline = 0.0
//!
//! [methods]
//! list = all
//! seed = 0
//! ig_steps = 32
//!
//! [strexp]
//! modes = GL, L
//! base_method = auto
//! normalization = linf
//! include_blank_slots = false
//! query_metric = confidence
//!
//! [output]
//! dir = out
//! metrics = accuracy, confidence
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attrib::{MethodId, MethodParams};
use crate::image::{HEIGHT, WIDTH};
use crate::selectivity::Metric;
use crate::strexp::{BaseMethod, Normalization, StrExpMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: PathBuf,
    pub datasets: Vec<PathBuf>,
    /// Empty, one shared set, or one per dataset.
    pub calibration: Vec<PathBuf>,
    /// Cap on images per dataset.
    pub limit: Option<usize>,
    pub cell: usize,
    pub baseline: f64,
    pub methods: Vec<MethodId>,
    pub params: MethodParams,
    pub strexp_modes: Vec<StrExpMode>,
    pub base_method: BaseMethod,
    pub normalization: Normalization,
    pub include_blank_slots: bool,
    pub query_metric: Metric,
    pub metrics: Vec<Metric>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PathBuf::from("model.sxm"),
            datasets: Vec::new(),
            calibration: Vec::new(),
            limit: None,
            cell: crate::image::DEFAULT_CELL,
            baseline: 0.0,
            methods: MethodId::ALL.to_vec(),
            params: MethodParams::default(),
            strexp_modes: vec![StrExpMode::GL, StrExpMode::L],
            base_method: BaseMethod::Auto,
            normalization: Normalization::Linf,
            include_blank_slots: false,
            query_metric: Metric::Confidence,
            metrics: Metric::ALL.to_vec(),
            output: PathBuf::from("out"),
        }
    }
}

/// Raw sections in file order of first appearance, each with its keys and the line they came from.
type Sections = BTreeMap<String, BTreeMap<String, (String, usize)>>;

fn parse_sections(text: &str, path: &str) -> Result<Sections> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, format!("unterminated section header {line:?}")))?
                .trim();
            if name.is_empty() {
                return Err(err(line_no, "empty section name".into()));
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err(line_no, "empty key".into()));
        }
        let section = current
            .as_ref()
            .ok_or_else(|| err(line_no, format!("key {key:?} outside any section")))?;
        let entries = sections.get_mut(section).expect("section registered");
        if entries.contains_key(key) {
            return Err(err(line_no, format!("duplicate key {section}.{key}")));
        }
        entries.insert(key.to_string(), (value.trim().to_string(), line_no));
    }
    Ok(sections)
}

struct Reader<'a> {
    sections: Sections,
    path: &'a str,
    base: &'a Path,
}

impl Reader<'_> {
    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            message,
        }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn value<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.take(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|e| self.err(line, format!("{section}.{key}: {e}"))),
        }
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.take(section, key) {
            None => Ok(default),
            Some((v, line)) => split_list(&v)
                .map(|item| {
                    item.parse()
                        .map_err(|e| self.err(line, format!("{section}.{key}: {e}")))
                })
                .collect(),
        }
    }

    fn path(&mut self, section: &str, key: &str, default: &Path) -> PathBuf {
        match self.take(section, key) {
            None => self.base.join(default),
            Some((v, _)) => self.base.join(v),
        }
    }

    fn paths(&mut self, section: &str, key: &str) -> Vec<PathBuf> {
        match self.take(section, key) {
            None => Vec::new(),
            Some((v, _)) => split_list(&v).map(|p| self.base.join(p)).collect(),
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Parse `text`; `path` is used for diagnostics and to resolve relative paths.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut r = Reader {
            sections: parse_sections(text, &shown)?,
            path: &shown,
            base,
        };
        let d = RunConfig::default();
        let p = MethodParams::default();

        let methods = match r.take("methods", "list") {
            None => d.methods.clone(),
            Some((v, _)) if v.trim() == "all" => MethodId::ALL.to_vec(),
            Some((v, line)) => split_list(&v)
                .map(|m| {
                    m.parse::<MethodId>()
                        .map_err(|e| r.err(line, format!("methods.list: {e}")))
                })
                .collect::<Result<_>>()?,
        };
        let strexp_modes = match r.take("strexp", "modes") {
            None => d.strexp_modes.clone(),
            Some((v, _)) if v.trim() == "none" => Vec::new(),
            Some((v, line)) => split_list(&v)
                .map(|m| {
                    m.parse::<StrExpMode>()
                        .map_err(|e| r.err(line, format!("strexp.modes: {e}")))
                })
                .collect::<Result<_>>()?,
        };
        let limit = match r.take("data", "limit") {
            None => None,
            Some((v, line)) => Some(
                v.parse()
                    .map_err(|e| r.err(line, format!("data.limit: {e}")))?,
            ),
        };

        let cfg = RunConfig {
            model: r.path("model", "path", &d.model),
            datasets: r.paths("data", "datasets"),
            calibration: r.paths("data", "calibration"),
            limit,
            cell: r.value("segmentation", "cell", d.cell)?,
            baseline: r.value("segmentation", "baseline", d.baseline)?,
            methods,
            params: MethodParams {
                ig_steps: r.value("methods", "ig_steps", p.ig_steps)?,
                gradshap_samples: r.value("methods", "gradshap_samples", p.gradshap_samples)?,
                gradshap_sigma: r.value("methods", "gradshap_sigma", p.gradshap_sigma)?,
                kernel_shap_samples: r.value(
                    "methods",
                    "kernel_shap_samples",
                    p.kernel_shap_samples,
                )?,
                kernel_shap_exhaustive: r.value(
                    "methods",
                    "kernel_shap_exhaustive",
                    p.kernel_shap_exhaustive,
                )?,
                lime_samples: r.value("methods", "lime_samples", p.lime_samples)?,
                lime_kernel_width: r.value("methods", "lime_kernel_width", p.lime_kernel_width)?,
                lime_ridge: r.value("methods", "lime_ridge", p.lime_ridge)?,
                shapley_permutations: r.value(
                    "methods",
                    "shapley_permutations",
                    p.shapley_permutations,
                )?,
                seed: r.value("methods", "seed", p.seed)?,
            },
            strexp_modes,
            base_method: r.value("strexp", "base_method", d.base_method)?,
            normalization: r.value("strexp", "normalization", d.normalization)?,
            include_blank_slots: r.value("strexp", "include_blank_slots", d.include_blank_slots)?,
            query_metric: r.value("strexp", "query_metric", d.query_metric)?,
            metrics: r.list("output", "metrics", d.metrics.clone())?,
            output: r.path("output", "dir", &d.output),
        };

        if let Some((section, key, line)) = r
            .sections
            .iter()
            .flat_map(|(s, keys)| {
                keys.iter()
                    .map(move |(k, (_, line))| (s.clone(), k.clone(), *line))
            })
            .min_by_key(|t| t.2)
        {
            return Err(r.err(line, format!("unknown key {section}.{key}")));
        }
        cfg.validate().map_err(|e| Error::Parse {
            path: shown.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || HEIGHT % self.cell != 0 || WIDTH % self.cell != 0 {
            return Err(Error::InvalidValue(format!(
                "segmentation cell {} must divide {HEIGHT} and {WIDTH}",
                self.cell
            )));
        }
        if !(0.0..=1.0).contains(&self.baseline) {
            return Err(Error::InvalidValue(format!(
                "baseline {} outside [0, 1]",
                self.baseline
            )));
        }
        if self.datasets.is_empty() {
            return Err(Error::Missing("data.datasets lists no dataset".into()));
        }
        if self.methods.is_empty() && self.strexp_modes.is_empty() {
            return Err(Error::InvalidValue(
                "nothing to run: no methods and no strexp modes".into(),
            ));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidValue("output.metrics is empty".into()));
        }
        if self.limit == Some(0) {
            return Err(Error::InvalidValue("data.limit must be positive".into()));
        }
        let c = self.calibration.len();
        if c > 1 && c != self.datasets.len() {
            return Err(Error::InvalidValue(format!(
                "{c} calibration sets for {} datasets",
                self.datasets.len()
            )));
        }
        if !self.strexp_modes.is_empty() && self.base_method == BaseMethod::Auto && c == 0 {
            return Err(Error::Missing(
                "strexp.base_method = auto needs data.calibration".into(),
            ));
        }
        self.params.validate()
    }

    /// Calibration set for dataset `i`, if any.
    pub fn calibration_for(&self, i: usize) -> Option<&Path> {
        match self.calibration.len() {
            0 => None,
            1 => Some(&self.calibration[0]),
            _ => self.calibration.get(i).map(PathBuf::as_path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# benchmark
[model]
path = m.sxm

[data]
datasets = a, b ; two sets
calibration = ca, cb
limit = 5

[segmentation]
cell = 16
baseline = 0.5

[methods]
list = IG, Saliency
ig_steps = 8
seed = 7

[strexp]
modes = GL
base_method = FA
normalization = none
include_blank_slots = true
query_metric = accuracy

[output]
dir = results
metrics = confidence
";

    #[test]
    fn parses_every_key() {
        let c = RunConfig::parse(FULL, Path::new("/cfg/run.ini")).unwrap();
        assert_eq!(c.model, PathBuf::from("/cfg/m.sxm"));
        assert_eq!(
            c.datasets,
            vec![PathBuf::from("/cfg/a"), PathBuf::from("/cfg/b")]
        );
        assert_eq!(c.calibration_for(1), Some(Path::new("/cfg/cb")));
        assert_eq!(c.limit, Some(5));
        assert_eq!((c.cell, c.baseline), (16, 0.5));
        assert_eq!(
            c.methods,
            vec![MethodId::IntegratedGradients, MethodId::Saliency]
        );
        assert_eq!((c.params.ig_steps, c.params.seed), (8, 7));
        assert_eq!(c.params.lime_samples, 400);
        assert_eq!(c.strexp_modes, vec![StrExpMode::GL]);
        assert_eq!(c.base_method, BaseMethod::Fixed(MethodId::FeatureAblation));
        assert_eq!(c.normalization, Normalization::None);
        assert!(c.include_blank_slots);
        assert_eq!(c.query_metric, Metric::Accuracy);
        assert_eq!(c.metrics, vec![Metric::Confidence]);
        assert_eq!(c.output, PathBuf::from("/cfg/results"));
    }

    #[test]
    fn defaults() {
        let c = RunConfig::parse(
            "[data]\ndatasets = x\ncalibration = y\n",
            Path::new("r.ini"),
        )
        .unwrap();
        assert_eq!(c.methods.len(), 11);
        assert_eq!(c.strexp_modes.len(), 2);
        assert_eq!(c.cell, 8);
        assert_eq!(c.calibration_for(3), Some(Path::new("y")));
    }

    fn line_of(text: &str) -> (usize, String) {
        match RunConfig::parse(text, Path::new("bad.ini")) {
            Err(Error::Parse { line, message, .. }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        assert_eq!(line_of("[data]\ndatasets = x\nnonsense\n").0, 3);
        assert_eq!(line_of("cell = 8\n").0, 1);
        assert_eq!(line_of("[data\n").0, 1);
        assert_eq!(
            line_of("[data]\ndatasets = x\n[segmentation]\ncell = eight\n").0,
            4
        );
        let (line, msg) = line_of("[data]\ndatasets = x\n\n[methods]\nlist = IG, Bogus\n");
        assert_eq!(line, 5);
        assert!(msg.contains("Bogus"), "{msg}");
        let (line, msg) = line_of("[data]\ndatasets = x\n[methods]\nig_step = 3\n");
        assert_eq!(line, 4);
        assert!(msg.contains("unknown key methods.ig_step"));
        assert_eq!(line_of("[data]\ndatasets = x\ndatasets = y\n").0, 3);
        let e = RunConfig::parse("[data\n", Path::new("bad.ini")).unwrap_err();
        assert!(e.to_string().starts_with("bad.ini:1:"), "{e}");
    }

    #[test]
    fn semantic_checks() {
        let (_, msg) = line_of("[data]\ndatasets = x\ncalibration = c\n[segmentation]\ncell = 7\n");
        assert!(msg.contains("divide"), "{msg}");
        assert!(line_of("[segmentation]\ncell = 8\n")
            .1
            .contains("no dataset"));
        assert!(line_of("[data]\ndatasets = x\n").1.contains("calibration"));
        assert!(line_of("[data]\ndatasets = x, y\ncalibration = a, b, c\n")
            .1
            .contains("calibration"));
        let ok = RunConfig::parse(
            "[data]\ndatasets = x\n[strexp]\nmodes = none\n",
            Path::new("r.ini"),
        )
        .unwrap();
        assert!(ok.strexp_modes.is_empty());
    }
}
