use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqattr::attrib::{explain, AttributionMethod, ExplainRequest, MethodId, MethodParams};
use seqattr::image::{grid_segmentation, segment_means, HEIGHT, WIDTH};
use seqattr::recognizer::{decode, load_model, Recognizer, BLANK, SLOTS};
use seqattr::strexp::{strexp_explain, BaseMethod, Normalization, StrExpConfig, StrExpMode};
use seqattr::synth::load_dataset;
use seqattr_cli::Sidecar;
use tempfile::TempDir;

fn seqattr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqattr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqattr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset and a briefly trained model.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        ok(&[
            "synth",
            "--name",
            "train",
            "--size",
            "300",
            "--seed",
            "5",
            "--out",
            s(root),
        ]);
        ok(&[
            "synth",
            "--name",
            "eval",
            "--size",
            "6",
            "--seed",
            "6",
            "--out",
            s(root),
        ]);
        ok(&[
            "synth",
            "--name",
            "calib",
            "--size",
            "3",
            "--seed",
            "7",
            "--out",
            s(root),
        ]);
        let model = root.join("m.sxm");
        ok(&[
            "train",
            "--data",
            s(&root.join("train")),
            "--epochs",
            "3",
            "--out",
            s(&model),
        ]);
        Fixture { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = ok(&[
            "synth",
            "--name",
            "clean",
            "--size",
            "25",
            "--variant",
            "clean",
            "--seed",
            "1",
            "--out",
            s(d.path()),
        ]);
        assert!(out.contains("25 images"));
    }
    let ta = tree(&a.path().join("clean"));
    assert_eq!(ta.len(), 26);
    assert_eq!(
        ta.iter()
            .filter(|(p, _)| p.extension().is_some_and(|e| e == "pgm"))
            .count(),
        25
    );
    assert_eq!(ta, tree(&b.path().join("clean")));

    let bad = seqattr(&[
        "synth",
        "--name",
        "x",
        "--size",
        "2",
        "--variant",
        "blurry",
        "--out",
        s(a.path()),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let zero = seqattr(&["synth", "--name", "x", "--size", "0", "--out", s(a.path())]);
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn train_edge_cases() {
    let f = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--name",
        "d",
        "--size",
        "40",
        "--seed",
        "2",
        "--out",
        s(f.path()),
    ]);
    let model = f.path().join("init.sxm");
    let out = ok(&[
        "train",
        "--data",
        s(&f.path().join("d")),
        "--epochs",
        "0",
        "--seed",
        "4",
        "--out",
        s(&model),
    ]);
    assert!(out.contains("on 4 images"), "{out}");
    let saved = load_model(&model).unwrap();
    let init = seqattr::SlotNet::init(4);
    let img = load_dataset(&f.path().join("d")).unwrap().samples[0]
        .image
        .clone();
    let (a, b) = (saved.forward(&img).unwrap(), init.forward(&img).unwrap());
    assert!(a
        .logits
        .iter()
        .zip(&b.logits)
        .all(|(x, y)| (x - y).abs() < 1e-4));

    let missing = seqattr(&[
        "train",
        "--data",
        s(&f.path().join("nope")),
        "--out",
        s(&model),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("labels.tsv"));
}

#[test]
fn explain_strexp_files_and_sidecar() {
    let f = Fixture::new();
    let out_dir = f.path("gl");
    ok(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--dataset",
        s(&f.path("eval")),
        "--index",
        "1",
        "--method",
        "strexp",
        "--mode",
        "GL",
        "--base",
        "FA",
        "--out",
        s(&out_dir),
    ]);
    let model = load_model(&f.path("m.sxm")).unwrap();
    let sample = &load_dataset(&f.path("eval")).unwrap().samples[1];
    let pred = decode(&model.forward(&sample.image).unwrap());
    let non_blank = pred.slot_argmax.iter().filter(|&&c| c != BLANK).count();

    let ppms = fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ppm")
        })
        .count();
    assert_eq!(ppms, 2 + non_blank);

    let side = Sidecar::load(&out_dir.join("explanation.json")).unwrap();
    assert_eq!(side.predicted_text, pred.text);
    assert_eq!(side.base_method, Some(MethodId::FeatureAblation));
    assert_eq!(side.maps.len(), 2 + non_blank);
    let cfg = StrExpConfig {
        mode: StrExpMode::GL,
        base_method: BaseMethod::Fixed(MethodId::FeatureAblation),
        normalization: Normalization::Linf,
        ..StrExpConfig::default()
    };
    let seg = grid_segmentation(HEIGHT, WIDTH, 8).unwrap();
    let res = strexp_explain(&model, &sample.image, &cfg, &seg, 0.0, None).unwrap();
    let expected: Vec<Vec<f64>> = std::iter::once(&res.final_map)
        .chain(res.global.iter())
        .chain(res.locals.iter().map(|l| &l.map))
        .map(|m| segment_means(m, &seg).unwrap().scores)
        .collect();
    for (rec, want) in side.maps.iter().zip(&expected) {
        assert_eq!(rec.segment_scores.len(), want.len());
        for (a, b) in rec.segment_scores.iter().zip(want) {
            assert!((a - b).abs() <= 1e-9, "{} {a} {b}", rec.role);
        }
    }
    let out = model.forward(&sample.image).unwrap();
    for k in 0..SLOTS {
        assert!((side.slot_confidences[k] - out.prob(k, pred.slot_argmax[k])).abs() <= 1e-9);
    }
    for (rec, l) in side.maps[2..].iter().zip(&res.locals) {
        assert_eq!((rec.slot, rec.character), (Some(l.slot), l.character));
    }
}

#[test]
fn explain_single_method_and_capability_error() {
    let f = Fixture::new();
    let img = f.path("eval/images/00000.pgm");
    let dir = f.path("ig");
    ok(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--image",
        s(&img),
        "--method",
        "IG",
        "--seed",
        "3",
        "--out",
        s(&dir),
    ]);
    let side = Sidecar::load(&dir.join("explanation.json")).unwrap();
    assert_eq!(side.method, "IntegratedGradients");
    assert_eq!(side.seed, 3);
    assert!(dir.join("heatmap.ppm").is_file());

    let model = load_model(&f.path("m.sxm")).unwrap();
    let image = seqattr::pnm::read_pgm(&img).unwrap();
    let spec = decode(&model.forward(&image).unwrap()).global_spec();
    let seg = grid_segmentation(HEIGHT, WIDTH, 8).unwrap();
    let params = MethodParams {
        seed: 3,
        ..MethodParams::default()
    };
    let map = explain(
        &AttributionMethod::with_params(MethodId::IntegratedGradients, params),
        &model,
        &ExplainRequest {
            image: &image,
            spec: &spec,
            segments: Some(&seg),
            baseline: 0.0,
        },
    )
    .unwrap();
    let want = segment_means(&map, &seg).unwrap().scores;
    assert!(side.maps[0]
        .segment_scores
        .iter()
        .zip(&want)
        .all(|(a, b)| (a - b).abs() <= 1e-9));

    let denied = seqattr(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--image",
        s(&img),
        "--method",
        "IG",
        "--no-grad",
        "--out",
        s(&dir),
    ]);
    assert_eq!(denied.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&denied.stderr);
    assert!(msg.contains("gradient"), "{msg}");
    // perturbation methods need only forward passes
    ok(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--image",
        s(&img),
        "--method",
        "FA",
        "--no-grad",
        "--out",
        s(&dir),
    ]);

    let unknown = seqattr(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--image",
        s(&img),
        "--method",
        "magic",
    ]);
    assert_eq!(unknown.status.code(), Some(1));
    let auto = seqattr(&[
        "explain",
        "--model",
        s(&f.path("m.sxm")),
        "--image",
        s(&img),
    ]);
    assert_eq!(auto.status.code(), Some(1));
}

fn write_config(f: &Fixture, name: &str, body: &str) -> PathBuf {
    let p = f.path(name);
    fs::write(
        &p,
        format!("[model]\npath = m.sxm\n[data]\ndatasets = eval\ncalibration = calib\n{body}"),
    )
    .unwrap();
    p
}

#[test]
fn benchmark_shape_determinism_and_query_best() {
    let f = Fixture::new();
    let cfg = write_config(
        &f,
        "two.ini",
        "[methods]\nlist = Saliency, FA\n[strexp]\nmodes = none\n[output]\ndir = out_two\n",
    );
    ok(&["benchmark", "--config", s(&cfg)]);
    let csv = fs::read_to_string(f.path("out_two/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let first = fs::read(f.path("out_two/report.json")).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_seqattr"))
        .args(["benchmark", "--config", s(&cfg)])
        .env("SEQATTR_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(f.path("out_two/report.json")).unwrap(), first);

    let printed = ok(&["query-best", "--config", s(&cfg)]);
    let ranked: Vec<(String, f64)> = printed
        .lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            let (name, z) = (it.next()?, it.next()?);
            Some((name.to_string(), z.parse().ok()?))
        })
        .collect();
    let rows: Vec<(String, f64)> = csv
        .lines()
        .skip(1)
        .filter(|l| l.contains(",confidence,"))
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].to_string(), cols[3].parse().unwrap())
        })
        .collect();
    assert_eq!(ranked.len(), 2, "{printed}");
    for ((a, x), (b, y)) in ranked.iter().zip(&rows) {
        assert_eq!(a, b);
        assert!((x - y).abs() <= 1e-12, "{a}: {x} vs {y}");
    }

    let single = write_config(
        &f,
        "one.ini",
        "[methods]\nlist = LIME\n[strexp]\nmodes = none\n",
    );
    assert!(ok(&["query-best", "--config", s(&single)]).contains("best: LIME"));
}

#[test]
fn benchmark_with_strexp_and_curves() {
    let f = Fixture::new();
    let cfg = write_config(
        &f,
        "sx.ini",
        "[methods]\nlist = IXG\nkernel_shap_samples = 20\nlime_samples = 20\nshapley_permutations = 1\nig_steps = 4\ngradshap_samples = 2\n[segmentation]\ncell = 16\n[output]\ndir = sx\n",
    );
    ok(&["benchmark", "--config", s(&cfg), "--curves"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("sx/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], "seqattr-benchmark/1");
    assert_eq!(
        json["explainers"],
        serde_json::json!(["InputXGradient", "StrExp-GL", "StrExp-L"])
    );
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);
    assert_eq!(json["datasets"][0]["images"].as_array().unwrap().len(), 6);
    assert_eq!(json["datasets"][0]["base_method"], "InputXGradient");
    assert_eq!(json["config"]["cell"], 16);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let f = tempfile::tempdir().unwrap();
    let p = f.path().join("bad.ini");
    fs::write(&p, "[data]\ndatasets = x\n[methods]\nlist = IG, Nope\n").unwrap();
    let out = seqattr(&["benchmark", "--config", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.ini:4:"));

    fs::write(&p, "[data]\ndatasets = missing\n[strexp]\nmodes = none\n").unwrap();
    let out = seqattr(&["benchmark", "--config", s(&p)]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_seqattr"))
        .args(["methods"])
        .env("SEQATTR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(seqattr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seqattr(&["--help"]).status.code(), Some(0));
    assert!(ok(&["methods"]).lines().count() == 11);
}
