use rand::Rng;

use super::*;
use crate::image::{grid_segmentation, mask_absent};
use crate::rng::rng as seeded;
use crate::synth::{generate_dataset, DatasetSpec, Variant};
use crate::testutil::{random_image, random_model};

fn one_hot_output(classes: [usize; SLOTS]) -> ModelOutput {
    let mut logits = vec![0.0; SLOTS * CLASSES];
    for (k, &c) in classes.iter().enumerate() {
        logits[k * CLASSES + c] = 1000.0;
    }
    ModelOutput::from_logits(logits)
}

#[test]
fn zero_model_is_uniform() {
    let out = SlotNet::zeros().forward(&random_image(1)).unwrap();
    for &p in &out.probs {
        assert!((p - 1.0 / 37.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_normalized() {
    let m = random_model(2);
    for seed in 0..5 {
        let out = m.forward(&random_image(seed)).unwrap();
        for k in 0..SLOTS {
            let s: f64 = out.slot_probs(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(out.slot_probs(k).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn forward_matches_plain_matrix_multiply() {
    let m = random_model(3);
    let img = random_image(4);
    let out = m.forward(&img).unwrap();
    // oracle: hidden-major rows, explicit loops, no sparsity shortcut
    let w = m.w1_rows();
    let x = img.data();
    let hidden: Vec<f64> = (0..HIDDEN)
        .map(|j| {
            let mut acc = m.b1[j];
            for i in 0..INPUT {
                acc += w[j * INPUT + i] * x[i];
            }
            acc.max(0.0)
        })
        .collect();
    for k in 0..SLOTS {
        for c in 0..CLASSES {
            let mut l = m.head_bias[k * CLASSES + c];
            for j in 0..HIDDEN {
                l += m.heads[(k * CLASSES + c) * HIDDEN + j] * hidden[j];
            }
            assert!((out.logits[k * CLASSES + c] - l).abs() < 1e-10);
        }
    }
}

#[test]
fn decode_examples() {
    let uniform = SlotNet::zeros().forward(&random_image(0)).unwrap();
    let d = decode(&uniform);
    assert_eq!(d.slot_argmax, [BLANK; SLOTS]);
    assert_eq!(d.text, "");

    let c = class_of('c').unwrap();
    let a = class_of('a').unwrap();
    let t = class_of('t').unwrap();
    assert_eq!(
        decode(&one_hot_output([c, a, t, 0, 0, 0, 0, 0])).text,
        "cat"
    );
    assert_eq!(
        decode(&one_hot_output([c, 0, a, 0, t, 0, 0, 0])).text,
        "cat"
    );
    assert_eq!(class_of('a'), Some(1));
    assert_eq!(class_of('0'), Some(27));
    assert_eq!(char_of(36), Some('9'));
    assert_eq!(char_of(0), None);
}

#[test]
fn score_examples() {
    let labels = [3, 1, 20, 0, 0, 0, 0, 0];
    let out = one_hot_output(labels);
    let spec = ScoreSpec::Global {
        target_labels: labels,
    };
    assert!((spec.of(&out) - 1.0).abs() < 1e-12);

    let img = random_image(5);
    let uniform = score(
        &SlotNet::zeros(),
        &img,
        &ScoreSpec::Global {
            target_labels: [7; SLOTS],
        },
    )
    .unwrap();
    assert!((uniform - 1.0 / 37.0).abs() < 1e-15);

    let m = random_model(6);
    let out = m.forward(&img).unwrap();
    let local = score(
        &m,
        &img,
        &ScoreSpec::Local {
            slot: 3,
            target_class: 11,
        },
    )
    .unwrap();
    assert_eq!(local, out.prob(3, 11));

    assert!(score(
        &m,
        &img,
        &ScoreSpec::Local {
            slot: 8,
            target_class: 0
        }
    )
    .is_err());
    assert!(score(
        &m,
        &img,
        &ScoreSpec::Local {
            slot: 0,
            target_class: 37
        }
    )
    .is_err());
    assert!(score(
        &m,
        &img,
        &ScoreSpec::Global {
            target_labels: [37; SLOTS]
        }
    )
    .is_err());
}

fn fd_check(m: &SlotNet, img: &Image, spec: &ScoreSpec, pixels: &[usize]) -> f64 {
    let g = m
        .score_gradient(img, spec, &BackwardRule::Standard)
        .unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &i in pixels {
        // central difference on the raw pixel vector (may leave [0,1] by h)
        let eval = |delta: f64| {
            let mut x = img.data().to_vec();
            x[i] += delta;
            spec.of(&m.output_from_pre(&m.pre_activation(&x)))
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let a = g.values()[i];
        let denom = a.abs().max(fd.abs());
        let err = if denom < 1e-7 {
            (a - fd).abs() / 1e-7
        } else {
            (a - fd).abs() / denom
        };
        worst = worst.max(err);
    }
    worst
}

#[test]
fn standard_gradient_matches_finite_differences() {
    let m = random_model(7);
    let mut r = seeded(8);
    for trial in 0..6 {
        let img = random_image(100 + trial);
        let spec = if trial % 2 == 0 {
            ScoreSpec::Global {
                target_labels: std::array::from_fn(|_| r.gen_range(0..CLASSES)),
            }
        } else {
            ScoreSpec::Local {
                slot: r.gen_range(0..SLOTS),
                target_class: r.gen_range(0..CLASSES),
            }
        };
        let pixels: Vec<usize> = (0..50).map(|_| r.gen_range(0..INPUT)).collect();
        let err = fd_check(&m, &img, &spec, &pixels);
        assert!(err <= 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn rules_coincide_when_nothing_is_clipped() {
    // nonnegative first layer and positive biases keep every pre-activation
    // positive; only the target row of each head is nonzero (and positive), so
    // every incoming hidden gradient is nonnegative
    let mut r = seeded(9);
    let mut m = SlotNet::zeros();
    m.w1.iter_mut().for_each(|w| *w = r.gen_range(0.0..0.01));
    m.b1.iter_mut().for_each(|b| *b = r.gen_range(0.1..0.2));
    let target = 5;
    for k in 0..SLOTS {
        for j in 0..HIDDEN {
            m.heads[(k * CLASSES + target) * HIDDEN + j] = r.gen_range(0.0..0.05);
        }
    }
    let img = random_image(10);
    let spec = ScoreSpec::Local {
        slot: 2,
        target_class: target,
    };
    let std = m
        .score_gradient(&img, &spec, &BackwardRule::Standard)
        .unwrap();
    let guided = m
        .score_gradient(&img, &spec, &BackwardRule::Guided)
        .unwrap();
    let deconv = m
        .score_gradient(&img, &spec, &BackwardRule::Deconv)
        .unwrap();
    assert_eq!(std, guided);
    assert_eq!(std, deconv);
}

#[test]
fn rules_coincide_for_linear_surrogate() {
    let m = random_model(11).with_activation(Activation::Identity);
    let img = random_image(12);
    let base = Image::filled(0.0).unwrap();
    let spec = ScoreSpec::Global {
        target_labels: [4; SLOTS],
    };
    let rules = [
        BackwardRule::Standard,
        BackwardRule::Guided,
        BackwardRule::Deconv,
        BackwardRule::DeepLiftRescale {
            baseline: Some(m.trace(&base).unwrap()),
        },
    ];
    let maps: Vec<_> = rules
        .iter()
        .map(|r| m.score_gradient(&img, &spec, r).unwrap())
        .collect();
    for other in &maps[1..] {
        assert_eq!(&maps[0], other);
    }
}

#[test]
fn rules_differ_on_a_relu_model() {
    let m = random_model(13);
    let img = random_image(14);
    let spec = ScoreSpec::Global {
        target_labels: [1; SLOTS],
    };
    let std = m
        .score_gradient(&img, &spec, &BackwardRule::Standard)
        .unwrap();
    let guided = m
        .score_gradient(&img, &spec, &BackwardRule::Guided)
        .unwrap();
    assert_ne!(std, guided);
}

#[test]
fn deeplift_against_itself_is_the_gradient() {
    let m = random_model(15);
    let img = random_image(16);
    let spec = ScoreSpec::Local {
        slot: 0,
        target_class: 2,
    };
    let own = BackwardRule::DeepLiftRescale {
        baseline: Some(m.trace(&img).unwrap()),
    };
    assert_eq!(
        m.score_gradient(&img, &spec, &own).unwrap(),
        m.score_gradient(&img, &spec, &BackwardRule::Standard)
            .unwrap()
    );
    let missing = BackwardRule::DeepLiftRescale { baseline: None };
    assert!(matches!(
        m.score_gradient(&img, &spec, &missing),
        Err(Error::Missing(_))
    ));
}

#[test]
fn forward_only_hides_gradients() {
    let m = random_model(17);
    let black_box = ForwardOnly(&m);
    let img = random_image(18);
    assert_eq!(black_box.forward(&img).unwrap(), m.forward(&img).unwrap());
    assert!(!black_box.has_gradients());
    assert!(matches!(
        black_box.score_gradient(
            &img,
            &ScoreSpec::Local {
                slot: 0,
                target_class: 0
            },
            &BackwardRule::Standard
        ),
        Err(Error::GradientUnavailable(_))
    ));
}

#[test]
fn fast_masked_forward_matches_masked_images() {
    let m = random_model(19);
    let img = random_image(20);
    let seg = grid_segmentation(32, 128, 8).unwrap();
    let fast = m.masked(&img, &seg, 0.2).unwrap();
    let slow = MaskedImages::new(&m, &img, &seg, 0.2).unwrap();
    let mut r = seeded(21);
    for _ in 0..10 {
        let present: Vec<bool> = (0..64).map(|_| r.gen_bool(0.5)).collect();
        let a = fast.output(&present).unwrap();
        let b = slow.output(&present).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!((x - y).abs() < 1e-10);
        }
    }
    // endpoints are exact
    let all = vec![true; 64];
    let none = vec![false; 64];
    assert_eq!(fast.output(&all).unwrap(), m.forward(&img).unwrap());
    assert_eq!(
        fast.output(&none).unwrap(),
        m.forward(&mask_absent(&img, &seg, &none, 0.2).unwrap())
            .unwrap()
    );
    assert!(fast.output(&all[..10]).is_err());
}

fn tiny_dataset(size: usize, seed: u64) -> Vec<crate::synth::Sample> {
    generate_dataset(&DatasetSpec {
        name: "t".into(),
        size,
        variant: Variant::Clean,
        seed,
    })
    .unwrap()
    .samples
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = tiny_dataset(96, 1);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let init = SlotNet::init(0);
    let a = train(&init, &data, &cfg).unwrap();
    let b = train(&init, &data, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_history, b.loss_history);
    assert!(a.loss_history.iter().all(|l| l.is_finite()));
    assert!(a.loss_history[2] < a.loss_history[0]);
}

#[test]
fn zero_epochs_keeps_initialization() {
    let data = tiny_dataset(8, 2);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let init = SlotNet::init(4);
    let r = train(&init, &data, &cfg).unwrap();
    assert_eq!(r.model, init);
    assert!(r.loss_history.is_empty());
}

#[test]
fn training_errors() {
    assert!(train(&SlotNet::init(0), &[], &TrainConfig::default()).is_err());
    let data = tiny_dataset(8, 3);
    let cfg = TrainConfig {
        epochs: 2,
        learning_rate: 1e200,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&SlotNet::init(0), &data, &cfg),
        Err(Error::Diverged { .. })
    ));
}

#[test]
fn model_file_round_trip() {
    let m = random_model(22);
    let back = decode_model(&encode_model(&m)).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let img = random_image(200 + seed);
        let a = m.forward(&img).unwrap();
        let b = back.forward(&img).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            worst = worst.max((x - y).abs());
        }
    }
    // f32 storage of ~1e6 weights of magnitude ~0.02; measured worst case is ~1e-6
    assert!(worst <= 1e-5, "max logit difference {worst}");

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.sxm");
    save_model(&path, &m).unwrap();
    assert_eq!(load_model(&path).unwrap(), back);
}

#[test]
fn model_file_errors() {
    let bytes = encode_model(&SlotNet::zeros());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_model(&bad), Err(Error::Format(m)) if m.contains("magic")));
    assert!(
        matches!(decode_model(&bytes[..bytes.len() - 3]), Err(Error::Format(m)) if m.contains("truncated"))
    );
    assert!(decode_model(&bytes[..10]).is_err());
    let mut dims = bytes.clone();
    dims[8] = 7;
    assert!(matches!(decode_model(&dims), Err(Error::Format(m)) if m.contains("dims")));
}
