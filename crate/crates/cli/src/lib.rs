//! Subcommands of the `seqattr` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use seqattr::attrib::{
    explain, list_methods, AttributionMethod, ExplainRequest, MethodId, MethodParams,
};
use seqattr::benchmark::{
    rank_methods, run_from_config, write_atomic, write_report, BenchmarkOptions,
};
use seqattr::config::RunConfig;
use seqattr::image::{
    grid_segmentation, render_heatmap, segment_means, AttributionMap, HEIGHT, WIDTH,
};
use seqattr::par::Exec;
use seqattr::pnm::{read_pgm, write_ppm};
use seqattr::recognizer::{
    char_of, decode, exact_match_accuracy, load_model, save_model, train, ForwardOnly, Recognizer,
    SlotNet, TrainConfig, SLOTS,
};
use seqattr::strexp::{strexp_explain, BaseMethod, Normalization, StrExpConfig, StrExpMode};
use seqattr::synth::{generate_dataset, load_dataset, save_dataset, DatasetSpec, Sample, Variant};
use seqattr::{Image, ScoreSpec};

#[derive(Debug, Parser)]
#[command(
    name = "seqattr",
    version,
    about = "Attribution explanations for a slot-based text recognizer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train the recognizer and report held-out exact-match accuracy.
    Train(TrainArgs),
    /// Explain one image with one method or with the combined explainer.
    Explain(ExplainArgs),
    /// Run the selectivity benchmark described by a config file.
    Benchmark(ConfigArgs),
    /// Rank methods by selectivity and print the best one.
    QueryBest(QueryArgs),
    /// List attribution method names.
    Methods,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value = "clean")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parent directory; the dataset goes to `<out>/<name>`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out set; without it the last 10% of `--data` is held out.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value = "model.sxm")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A PGM image.
    #[arg(long, conflicts_with = "dataset")]
    pub image: Option<PathBuf>,
    /// A dataset directory; pick the image with `--index`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Method name or alias, or `strexp`.
    #[arg(long, default_value = "strexp")]
    pub method: String,
    /// Explain the predicted class of one slot instead of the whole sequence.
    #[arg(long)]
    pub slot: Option<usize>,
    #[arg(long, default_value = "GL")]
    pub mode: StrExpMode,
    /// Base method of the combined explainer, or `auto`.
    #[arg(long, default_value = "auto")]
    pub base: BaseMethod,
    /// Calibration dataset for `--base auto`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value = "linf")]
    pub normalization: Normalization,
    #[arg(long)]
    pub include_blank_slots: bool,
    #[arg(long, default_value_t = 8)]
    pub cell: usize,
    #[arg(long, default_value_t = 0.0)]
    pub baseline: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hide the model's gradients, as for a black-box recognizer.
    #[arg(long)]
    pub no_grad: bool,
    #[arg(long, default_value = "explain_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Include per-image curves in the JSON report.
    #[arg(long)]
    pub curves: bool,
    /// Override the output directory of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Rank on the calibration sets instead of the evaluation sets.
    #[arg(long)]
    pub calibration: bool,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::QueryBest(a) => cmd_query_best(&a),
        Command::Methods => {
            for m in list_methods() {
                println!("{:<20} {:<8} {}", m.name(), m.abbreviation(), m.short());
            }
            Ok(())
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let spec = DatasetSpec {
        name: a.name.clone(),
        size: a.size,
        variant: a.variant,
        seed: a.seed,
    };
    let data = generate_dataset(&spec).map_err(usage)?;
    let dir = save_dataset(&a.out, &data).map_err(runtime)?;
    let chars: usize = data.samples.iter().map(|s| s.label.chars().count()).sum();
    println!(
        "wrote {} images ({} variant, seed {}, mean label length {:.2}) to {}",
        data.samples.len(),
        a.variant,
        a.seed,
        chars as f64 / data.samples.len().max(1) as f64,
        dir.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> CmdResult {
    let data = load_dataset(&a.data).map_err(runtime)?;
    let (train_set, held_out): (Vec<Sample>, Vec<Sample>) = match &a.validation {
        Some(v) => (data.samples, load_dataset(v).map_err(runtime)?.samples),
        None => {
            let mut samples = data.samples;
            let keep = samples.len() - samples.len() / 10;
            let held = samples.split_off(keep);
            (samples, held)
        }
    };
    if held_out.is_empty() {
        return Err(usage(anyhow::anyhow!(
            "validation split is empty; use at least 10 samples or --validation"
        )));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    let report = train(&SlotNet::init(a.seed), &train_set, &cfg).map_err(runtime)?;
    save_model(&a.out, &report.model).map_err(runtime)?;
    let acc = exact_match_accuracy(&report.model, &held_out, Exec::Parallel).map_err(runtime)?;
    if let Some(loss) = report.loss_history.last() {
        println!("final training loss {loss:.6}");
    }
    println!(
        "validation exact-match accuracy {acc:.4} on {} images; model saved to {}",
        held_out.len(),
        a.out.display()
    );
    Ok(())
}

/// One rendered map of an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    /// `final`, `global`, `local` or `single`.
    pub role: String,
    pub file: String,
    pub slot: Option<usize>,
    pub character: Option<char>,
    /// Mean attribution of each grid segment.
    pub segment_scores: Vec<f64>,
}

/// Everything written next to the heatmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub source: String,
    pub method: String,
    pub base_method: Option<MethodId>,
    pub mode: Option<StrExpMode>,
    pub normalization: Option<Normalization>,
    pub predicted_text: String,
    pub slot_classes: Vec<usize>,
    /// Probability of the predicted class at each slot.
    pub slot_confidences: Vec<f64>,
    pub cell: usize,
    pub baseline: f64,
    pub seed: u64,
    pub params: MethodParams,
    pub maps: Vec<MapRecord>,
}

impl Sidecar {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn load_image(a: &ExplainArgs) -> Result<(Image, String), Failure> {
    match (&a.image, &a.dataset) {
        (Some(p), None) => Ok((read_pgm(p).map_err(runtime)?, p.display().to_string())),
        (None, Some(d)) => {
            let data = load_dataset(d).map_err(runtime)?;
            let s = data.samples.into_iter().nth(a.index).ok_or_else(|| {
                usage(anyhow::anyhow!(
                    "--index {} out of range for {}",
                    a.index,
                    d.display()
                ))
            })?;
            Ok((s.image, format!("{}#{}", d.display(), a.index)))
        }
        _ => Err(usage(anyhow::anyhow!(
            "give exactly one of --image or --dataset"
        ))),
    }
}

pub fn cmd_explain(a: &ExplainArgs) -> CmdResult {
    if a.cell == 0 || HEIGHT % a.cell != 0 || WIDTH % a.cell != 0 {
        return Err(usage(anyhow::anyhow!(
            "--cell {} must divide {HEIGHT} and {WIDTH}",
            a.cell
        )));
    }
    if a.slot.is_some_and(|k| k >= SLOTS) {
        return Err(usage(anyhow::anyhow!("--slot must be below {SLOTS}")));
    }
    let strexp = a.method.eq_ignore_ascii_case("strexp");
    let method_id = if strexp {
        None
    } else {
        Some(a.method.parse::<MethodId>().map_err(usage)?)
    };
    let net = load_model(&a.model).map_err(runtime)?;
    let hidden = ForwardOnly(&net);
    let model: &dyn Recognizer = if a.no_grad { &hidden } else { &net };
    let (image, source) = load_image(a)?;
    let seg = grid_segmentation(HEIGHT, WIDTH, a.cell).map_err(usage)?;
    let params = MethodParams {
        seed: a.seed,
        ..MethodParams::default()
    };

    let out = model.forward(&image).map_err(runtime)?;
    let pred = decode(&out);
    let mut maps: Vec<(MapRecord, AttributionMap)> = Vec::new();
    let mut push = |role: &str,
                    file: String,
                    slot: Option<usize>,
                    character: Option<char>,
                    map: AttributionMap| {
        let segment_scores = segment_means(&map, &seg).map_err(runtime)?.scores;
        maps.push((
            MapRecord {
                role: role.into(),
                file,
                slot,
                character,
                segment_scores,
            },
            map,
        ));
        Ok::<_, Failure>(())
    };

    let (method_name, base_method, mode, normalization) = if let Some(id) = method_id {
        let spec = match a.slot {
            Some(slot) => ScoreSpec::Local {
                slot,
                target_class: pred.slot_argmax[slot],
            },
            None => pred.global_spec(),
        };
        let req = ExplainRequest {
            image: &image,
            spec: &spec,
            segments: Some(&seg),
            baseline: a.baseline,
        };
        let map = explain(
            &AttributionMethod::with_params(id, params.clone()),
            model,
            &req,
        )
        .map_err(classify)?;
        push(
            "single",
            "heatmap.ppm".into(),
            a.slot,
            a.slot.and_then(|k| char_of(pred.slot_argmax[k])),
            map,
        )?;
        (id.name().to_string(), None, None, None)
    } else {
        let calibration = match &a.calibration {
            Some(p) => Some(load_dataset(p).map_err(runtime)?.samples),
            None => None,
        };
        if a.base == BaseMethod::Auto && calibration.is_none() {
            return Err(usage(anyhow::anyhow!("--base auto needs --calibration")));
        }
        let cfg = StrExpConfig {
            mode: a.mode,
            base_method: a.base,
            normalization: a.normalization,
            include_blank_slots: a.include_blank_slots,
            params: params.clone(),
            query_metric: seqattr::selectivity::Metric::Confidence,
        };
        let res = strexp_explain(
            model,
            &image,
            &cfg,
            &seg,
            a.baseline,
            calibration.as_deref(),
        )
        .map_err(classify)?;
        push("final", "final.ppm".into(), None, None, res.final_map)?;
        if let Some(g) = res.global {
            push("global", "global.ppm".into(), None, None, g)?;
        }
        for l in res.locals {
            let tag = l.character.unwrap_or('_');
            push(
                "local",
                format!("local_{}_{}.ppm", l.slot, tag),
                Some(l.slot),
                l.character,
                l.map,
            )?;
        }
        (
            a.mode.name().to_string(),
            Some(res.base_method),
            Some(a.mode),
            Some(a.normalization),
        )
    };

    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(runtime)?;
    for (rec, map) in &maps {
        let h = render_heatmap(&image, map).map_err(runtime)?;
        write_ppm(&a.out.join(&rec.file), &h).map_err(runtime)?;
    }
    let sidecar = Sidecar {
        source,
        method: method_name,
        base_method,
        mode,
        normalization,
        predicted_text: pred.text.clone(),
        slot_classes: pred.slot_argmax.to_vec(),
        slot_confidences: (0..SLOTS)
            .map(|k| out.prob(k, pred.slot_argmax[k]))
            .collect(),
        cell: a.cell,
        baseline: a.baseline,
        seed: a.seed,
        params,
        maps: maps.into_iter().map(|(r, _)| r).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(runtime)? + "\n";
    let path = a.out.join("explanation.json");
    write_atomic(&path, json.as_bytes()).map_err(runtime)?;
    println!(
        "predicted {:?}; wrote {} heatmap(s) and {}",
        pred.text,
        sidecar.maps.len(),
        path.display()
    );
    Ok(())
}

/// Argument-driven errors are usage errors; everything else is a runtime failure.
fn classify(e: seqattr::Error) -> Failure {
    use seqattr::Error::*;
    match e {
        GradientUnavailable(_) | InvalidValue(_) | OutOfRange(_) | Missing(_) => usage(e),
        other => runtime(other),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(usage)
}

pub fn cmd_benchmark(a: &ConfigArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    let opts = BenchmarkOptions {
        exec: Exec::Parallel,
        curves: a.curves,
    };
    let report = run_from_config(&cfg, opts).map_err(runtime)?;
    let (json, csv) = write_report(&report, &cfg.output).map_err(runtime)?;
    for d in &report.datasets {
        if let Some(b) = d.base_method {
            println!("{}: base method {}", d.name, b);
        }
    }
    print!("{}", report.to_csv());
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

pub fn cmd_query_best(a: &QueryArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let model = load_model(&cfg.model).map_err(runtime)?;
    let rankings = rank_methods(&model, &cfg, a.calibration, Exec::Parallel).map_err(runtime)?;
    for (name, r) in rankings {
        println!("dataset {name} ({} selectivity AUC)", cfg.query_metric);
        for (id, z) in &r.scores {
            println!("  {:<20} {z}", id.name());
        }
        println!("  best: {}", r.best);
    }
    Ok(())
}

/// Size the rayon pool from `SEQATTR_THREADS` when set.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SEQATTR_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        usage(anyhow::anyhow!(
            "SEQATTR_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(runtime)
}
