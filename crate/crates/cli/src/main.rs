use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use voseg_core::config::RunConfig;
use voseg_core::error::Error;
use voseg_core::matching::WindowSpec;
use voseg_core::model::Model;
use voseg_core::{gradcheck, inference, io, matching, metrics, trainer};

#[derive(Parser)]
#[command(name = "voseg", version, about = "Video object segmentation pipeline")]
struct Cli {
    /// Worker threads for the matching/convolution kernels. 1 guarantees
    /// bit-reproducible runs; higher counts change only timing.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic moving-shape sequences.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of sequences.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a sequence given its first-frame mask.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        first_mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window radius for local matching.
        #[arg(long, default_value_t = 15)]
        window: usize,
        /// Also write frame/mask overlay PNGs.
        #[arg(long)]
        overlays: bool,
    },
    /// Score predicted masks against ground truth (J, F, J&F).
    Eval {
        /// Directory of predicted mask sequences (or one sequence's masks).
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path; a CSV table is written next to it.
        #[arg(long)]
        report: PathBuf,
        /// Score the conditioning frame too.
        #[arg(long)]
        include_first: bool,
    },
    /// Finite-difference check of the full training-loss gradient.
    Gradcheck {
        /// Input image side length (divisible by 4).
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Compare windowed local matching against global previous-frame
    /// matching on random inputs.
    BenchMatching {
        #[arg(long, default_value_t = 120)]
        height: usize,
        #[arg(long, default_value_t = 120)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 15)]
        window: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage/validation problems exit 1
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if cli.threads == 0 {
        eprintln!("--threads must be >= 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("failed to configure thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Data(_) | Error::Shape(_) | Error::Json(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> voseg_core::Result<ExitCode> {
    match cmd {
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let spec: io::SynthSpec = serde_json::from_str(&text)?;
            let dirs = io::generate_synthetic(&spec, &out)?;
            println!("wrote {} sequence(s) under {}", dirs.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let videos = load_videos(&data)?;
            let mut model = Model::<f32>::init(&cfg.featnet, &cfg.head, cfg.seed);
            trainer::train(&videos, &mut model, &cfg.train, |step, loss| {
                println!("step={step} loss={loss}");
            })?;
            io::save_checkpoint(&out, &model)?;
            println!("checkpoint written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer { ckpt, seq, first_mask, out, window, overlays } => {
            let model = io::load_checkpoint(&ckpt)?;
            let frames = io::load_frames::<f32>(&seq)?;
            let mask0 = io::load_mask(&first_mask)?;
            let masks =
                inference::infer_video(&frames, &mask0, &model, WindowSpec::new(window))?;
            io::save_masks(&out, &masks)?;
            if overlays {
                let odir = out.join("overlays");
                std::fs::create_dir_all(&odir)?;
                for (i, (f, m)) in frames.iter().zip(&masks).enumerate() {
                    io::save_frame(&odir.join(format!("{i:05}.png")), &inference::overlay(f, m))?;
                }
            }
            println!("wrote {} masks to {}", masks.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { pred, gt, report, include_first } => {
            let rep = evaluate(&pred, &gt, include_first)?;
            std::fs::write(&report, serde_json::to_string_pretty(&rep)?)?;
            std::fs::write(report.with_extension("csv"), rep.to_csv())?;
            println!(
                "J={:.4} F={:.4} J&F={:.4}",
                rep.j_mean, rep.f_mean, rep.jf_mean
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { size } => {
            if size % 4 != 0 || size == 0 {
                return Err(Error::Config("--size must be a positive multiple of 4".into()));
            }
            let err = gradcheck::full_pipeline_check(size)?;
            println!("max relative error: {err:.3e}");
            if err < 1e-4 {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::BenchMatching { height, width, dim, window, trials } => {
            let report = matching::bench_matching(height, width, dim, window, trials);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Load every sequence subdirectory of `data` (or `data` itself when it is
/// a single sequence).
fn load_videos(
    data: &PathBuf,
) -> voseg_core::Result<Vec<(Vec<voseg_core::ArrayF32>, Vec<matching::ObjectLabelMap>)>> {
    if data.join("frames").is_dir() {
        return Ok(vec![io::load_sequence::<f32>(data)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no sequences under {}", data.display())));
    }
    dirs.iter().map(|d| io::load_sequence::<f32>(d)).collect()
}

/// Evaluate either one sequence (mask dir vs mask dir) or a tree of
/// sequence subdirectories with matching names.
fn evaluate(
    pred: &PathBuf,
    gt: &PathBuf,
    include_first: bool,
) -> voseg_core::Result<metrics::EvalReport> {
    let tol = metrics::DEFAULT_TOL_FRAC;
    let single = |p: &PathBuf| p.join("00000.png").exists();
    let mut reports = Vec::new();
    if single(pred) {
        let pm = io::load_masks(pred)?;
        let gm = io::load_masks(&resolve_mask_dir(gt))?;
        reports.push(metrics::evaluate_sequence("seq", &pm, &gm, include_first, tol)?);
    } else {
        let mut names: Vec<String> = std::fs::read_dir(pred)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Data(format!("no predictions under {}", pred.display())));
        }
        for name in names {
            let pm = io::load_masks(&pred.join(&name))?;
            let gm = io::load_masks(&resolve_mask_dir(&gt.join(&name)))?;
            reports.push(metrics::evaluate_sequence(&name, &pm, &gm, include_first, tol)?);
        }
    }
    Ok(metrics::aggregate(reports, include_first, tol))
}

/// Accept either a bare mask directory or a sequence directory with masks/.
fn resolve_mask_dir(p: &PathBuf) -> PathBuf {
    let m = p.join("masks");
    if m.is_dir() {
        m
    } else {
        p.clone()
    }
}

