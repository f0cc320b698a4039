use std::path::Path;
use std::process::{Command, Output};

use wavehit::imaging::{read_pnm, write_pnm, Image};

fn wavehit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavehit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(wavehit(&["--help"]).status.code(), Some(0));
    assert_eq!(wavehit(&["train-toy", "--help"]).status.code(), Some(0));
    assert_eq!(wavehit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wavehit(&["metrics", "--a", "x.ppm"]).status.code(), Some(2));
}

#[test]
fn metrics_on_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ppm");
    write_pnm(&Image::synthetic(24, 20, 1).unwrap(), &p).unwrap();
    let o = wavehit(&["metrics", "--a", path(&p), "--b", path(&p)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "psnr=inf ssim=1.000000");
}

#[test]
fn missing_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("absent.ppm");
    let o = wavehit(&["metrics", "--a", path(&p), "--b", path(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn dwt_of_constant_image_has_flat_detail_bands() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.ppm");
    write_pnm(&Image::filled(10, 8, 3, 0.4).unwrap(), &input).unwrap();
    let out = dir.path().join("bands");
    let o = wavehit(&["dwt", "--in", path(&input), "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("roundtrip_max_abs="));
    for band in ["ll", "lh", "hl", "hh"] {
        let img = read_pnm(out.join(format!("{band}.pgm")), Some(1)).unwrap();
        assert_eq!((img.width(), img.height()), (5, 4));
        if band != "ll" {
            assert!(img.samples().iter().all(|&v| (v * 255.0).round() == 128.0), "{band}");
        }
    }
}

#[test]
fn bench_writes_csv_with_expected_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cost.csv");
    let o = wavehit(&["bench", "--sizes", "8,16,32,64", "--out", path(&csv)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    let out = stdout(&o);
    let slope = |key: &str| -> f64 {
        out.split_whitespace().find_map(|t| t.strip_prefix(key)).unwrap().parse().unwrap()
    };
    assert!((0.9..=1.1).contains(&slope("wasc_slope=")), "{out}");
    assert!((1.9..=2.1).contains(&slope("wsa_slope=")), "{out}");
}

#[test]
fn train_then_infer_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr.ppm");
    write_pnm(&Image::synthetic(40, 40, 3).unwrap(), &hr).unwrap();
    let train = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.whsr"));
        let trace = dir.path().join(format!("{tag}.csv"));
        let o = wavehit(&[
            "train-toy", "--hr", path(&hr), "--scale", "2", "--steps", "6", "--seed", "4", "--out", path(&ckpt), "--trace",
            path(&trace),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(&ckpt).unwrap(), std::fs::read_to_string(&trace).unwrap())
    };
    let (a, b) = (train("a"), train("b"));
    assert_eq!(a, b);
    assert_eq!(a.1.lines().count(), 7);

    let lr = dir.path().join("lr.ppm");
    write_pnm(&Image::synthetic(13, 11, 5).unwrap(), &lr).unwrap();
    let sr = dir.path().join("sr.ppm");
    let o = wavehit(&["infer", "--ckpt", path(&dir.path().join("a.whsr")), "--in", path(&lr), "--out", path(&sr)]);
    assert_eq!(o.status.code(), Some(0));
    let img = read_pnm(&sr, Some(3)).unwrap();
    assert_eq!((img.width(), img.height()), (26, 22));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.cfg");
    std::fs::write(&cfg, "# three times\nupscale=3\nchannels=12\n").unwrap();
    let ckpt = dir.path().join("m.whsr");
    let o = wavehit(&[
        "train-toy", "--config", path(&cfg), "--scale", "2", "--steps", "1", "--out", path(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let model = wavehit::network::load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config().upscale, 2);
    assert_eq!(model.config().channels, 12);

    std::fs::write(&cfg, "colour=blue\n").unwrap();
    let o = wavehit(&["train-toy", "--config", path(&cfg), "--steps", "1", "--out", path(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn gradcheck_primitives_pass() {
    let o = wavehit(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
}
