use wavehit::imaging::Image;
use wavehit::network::{write_checkpoint, ModelConfig};
use wavehit::training::{train_toy, TrainSpec};

fn images() -> Vec<Image> {
    (0..4).map(|i| Image::synthetic(32, 32, 100 + i).unwrap()).collect()
}

fn spec(steps: usize) -> TrainSpec {
    TrainSpec { steps, ..TrainSpec::toy() }
}

#[test]
fn overfits_fixed_patches() {
    let out = train_toy(&ModelConfig::tiny(), &spec(200), &images()).unwrap();
    let first = out.trace[0].loss;
    let last = out.trace.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn windowed_loss_does_not_increase() {
    let out = train_toy(&ModelConfig::tiny(), &spec(500), &images()).unwrap();
    let means: Vec<f64> = out.trace[100..]
        .chunks(50)
        .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn zero_lr_keeps_loss_constant() {
    let s = TrainSpec { lr: 0.0, ..spec(6) };
    let out = train_toy(&ModelConfig::tiny(), &s, &images()).unwrap();
    assert!(out.trace.iter().all(|r| r.loss == out.trace[0].loss));
}

#[test]
fn identical_seeds_give_identical_runs() {
    let run = || {
        let out = train_toy(&ModelConfig::tiny(), &spec(5), &images()).unwrap();
        (write_checkpoint(&out.model).unwrap(), out.trace)
    };
    assert_eq!(run(), run());
}

#[test]
fn milestones_halve_learning_rate() {
    let out = train_toy(&ModelConfig::tiny(), &TrainSpec { milestones: vec![0.5], ..spec(4) }, &images()).unwrap();
    let lrs: Vec<f64> = out.trace.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![7e-3, 7e-3, 3.5e-3, 3.5e-3]);
}
