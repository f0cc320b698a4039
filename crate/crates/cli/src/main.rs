use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wavehit::complexity::scaling_experiment;
use wavehit::imaging::{psnr, read_pnm, ssim, write_pnm, Image};
use wavehit::network::{load_checkpoint, save_checkpoint, ModelConfig};
use wavehit::tensor::Tensor;
use wavehit::training::{gradient_suite, train_toy, trace_csv, TrainSpec};
use wavehit::wavelet::{haar_dwt2_reflect, haar_idwt2};
use wavehit::{Error, Result};

/// Largest relative gradient error accepted by `gradcheck`.
const GRAD_TOLERANCE: f64 = 1e-4;

/// Wavelet-attention super-resolution toolkit.
///
/// Model-building subcommands accept `--config FILE` with `key=value` lines
/// (num_blocks, layers_per_block, channels, heads, base_window,
/// window_schedule, upscale, ffn_expansion, gate_reduction, alternate).
/// Explicit flags override the file.
#[derive(Parser)]
#[command(name = "wavehit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 1 block, 2 layers, 8 channels, windows 4 and 8.
    Tiny,
    /// 4 blocks, 6 layers, 60 channels, windows 8/8/16/16/32/32.
    Full,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Tiny => ModelConfig::tiny(),
            Preset::Full => ModelConfig::default(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One-level Haar transform of an image into four normalized PGM sub-bands.
    Dwt {
        /// Input PGM or PPM; RGB input is reduced to luma.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory receiving ll.pgm, lh.pgm, hl.pgm and hh.pgm.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference gradient checks; exits 0 iff every check passes.
    Gradcheck {
        /// Also check the end-to-end tiny model against every parameter.
        #[arg(long)]
        tiny: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measured and analytic attention cost over window sizes, as CSV.
    Bench {
        /// Comma-separated window sides.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on random patches of HR images.
    TrainToy {
        /// HR training image (PPM); repeat for several. Without any, four
        /// synthetic 32×32 images are used.
        #[arg(long)]
        hr: Vec<PathBuf>,
        /// Upscaling factor; overrides `upscale` from the config file.
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// HR patch side.
        #[arg(long, default_value_t = 32)]
        patch: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Initial learning rate [default: 0.007].
        #[arg(long)]
        lr: Option<f64>,
        /// Disable gradient-norm clipping.
        #[arg(long)]
        no_clip: bool,
        #[arg(long, value_enum, default_value = "tiny")]
        preset: Preset,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Super-resolve a PPM with a trained checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM between two images on luma.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn model_config(preset: Preset, file: Option<&Path>) -> Result<ModelConfig> {
    let mut cfg = preset.config();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(cfg)
}

fn dwt(input: &Path, out_dir: &Path) -> Result<()> {
    let img = read_pnm(input, None)?;
    let gray = if img.channels() == 3 { img.luma() } else { img };
    let x = gray.to_tensor();
    let bands = haar_dwt2_reflect(&x)?;
    let back = haar_idwt2(&bands)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, band) in ["ll", "lh", "hl", "hh"].into_iter().zip(bands.bands()) {
        let lo = band.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = band.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let norm = if span > 0.0 {
            band.map(|v| (v - lo) / span)
        } else {
            Tensor::full(band.shape().to_vec(), 128.0 / 255.0)
        };
        write_pnm(&Image::from_tensor(&norm)?, out_dir.join(format!("{name}.pgm")))?;
        println!("band={name} min={lo:.6e} max={hi:.6e} pixel=(v-min)/(max-min)");
    }
    println!("roundtrip_max_abs={:.3e}", back.max_abs_diff(&x));
    Ok(())
}

fn gradcheck(tiny: bool, seed: u64) -> Result<bool> {
    let entries = gradient_suite(seed, tiny)?;
    let mut ok = true;
    for e in &entries {
        let pass = e.max_rel_error <= GRAD_TOLERANCE;
        ok &= pass;
        println!("{:<48} {:>10.3e} {}", e.name, e.max_rel_error, if pass { "ok" } else { "FAIL" });
    }
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    println!("max_rel_error={worst:.3e} tolerance={GRAD_TOLERANCE:e} {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn bench(sizes: &[usize], out: &Path, seed: u64, cfg: &ModelConfig) -> Result<()> {
    let report = scaling_experiment(cfg, sizes, seed)?;
    std::fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
    println!("wasc_slope={:.4} wsa_slope={:.4}", report.wasc.slope, report.wsa.slope);
    Ok(())
}

fn metrics(a: &Path, b: &Path) -> Result<()> {
    let (a, b) = (read_pnm(a, None)?, read_pnm(b, None)?);
    println!("psnr={:.4} ssim={:.6}", psnr(&a, &b)?, ssim(&a, &b)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Dwt { input, out_dir } => dwt(&input, &out_dir)?,
        Command::Gradcheck { tiny, seed } => return gradcheck(tiny, seed),
        Command::Bench { sizes, out, seed, preset, config } => {
            let cfg = model_config(preset, config.as_deref())?;
            bench(&sizes, &out, seed, &cfg)?;
        }
        Command::TrainToy { hr, scale, steps, seed, patch, batch, lr, no_clip, preset, config, out, trace } => {
            let mut cfg = model_config(preset, config.as_deref())?;
            if let Some(s) = scale {
                cfg.upscale = s;
            }
            let toy = TrainSpec::toy();
            let spec = TrainSpec {
                patch,
                batch,
                steps,
                scale: cfg.upscale,
                lr: lr.unwrap_or(toy.lr),
                seed,
                clip_norm: if no_clip { None } else { toy.clip_norm },
                ..toy
            };
            let images = if hr.is_empty() {
                (0..4).map(|i| Image::synthetic(32, 32, 100 + i)).collect::<Result<Vec<_>>>()?
            } else {
                hr.iter().map(|p| read_pnm(p, Some(3))).collect::<Result<Vec<_>>>()?
            };
            let outcome = train_toy(&cfg, &spec, &images)?;
            save_checkpoint(&outcome.model, &out)?;
            if let Some(path) = trace {
                std::fs::write(&path, trace_csv(&outcome.trace)).map_err(|e| Error::io(&path, e))?;
            }
            if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
                println!("steps={} loss_first={:.6e} loss_last={:.6e}", outcome.trace.len(), first.loss, last.loss);
            }
        }
        Command::Infer { ckpt, input, out } => {
            let model = load_checkpoint(&ckpt)?;
            let lr = read_pnm(&input, Some(3))?;
            let sr = model.infer(&lr.to_tensor())?;
            write_pnm(&Image::from_tensor(&sr)?, &out)?;
        }
        Command::Metrics { a, b } => metrics(&a, &b)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
