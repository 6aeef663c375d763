use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kfseg::datamodel::{
    binarize_resized, load_manifest, load_masks_dir, load_video_dir, pred_file_name, MaskFrame,
};
use kfseg::harness::{
    evaluate_checkpoint, load_dataset, num_workers, predict_video, prepare_experiment, run_experiment, split_manifest,
    summarize_runs, ExperimentConfig,
};
use kfseg::model::{load_checkpoint, read_meta};
use kfseg::overlay::write_overlays;
use kfseg::synthgen::{generate_dataset, load_synth_config, SynthConfig};
use kfseg::Error;

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  1  other failure (state/shape errors)
  2  usage or configuration error
  3  I/O error (missing files, unreadable images, count mismatches, no reports)
  4  numeric failure (non-finite training loss)

Environment:
  KFSEG_NUM_WORKERS  maximum number of videos decoded in parallel (default 1)";

#[derive(Parser, Debug)]
#[command(name = "kfseg", version, about = "Sequence-aware ultrasound needle segmentation", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (PNG frames, masks, manifest.json).
    Synth {
        /// synthgen.json; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        videos: usize,
        /// Frames per video: `N` or an inclusive range `LO-HI`.
        #[arg(long)]
        frames: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Image side length in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train (and evaluate) the configurations of an experiment file.
    Train {
        /// experiment.json
        #[arg(long)]
        config: PathBuf,
        /// Run a single fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one fold's test videos and write metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long, default_value_t = 5)]
        k_folds: usize,
        /// Split seed (defaults to the seed stored with the checkpoint).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output file (defaults to metrics.json next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream one video through a model and write pred_NNNNNN.png masks.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with frame_NNNNNN.png files.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Render the cross-fold comparison table from a runs directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Defaults to <runs>/summary.md.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay predicted (and optionally ground-truth) masks in red.
    Overlay {
        #[arg(long)]
        video: PathBuf,
        /// Directory with pred_NNNNNN.png files.
        #[arg(long)]
        pred: PathBuf,
        /// Directory with mask_NNNNNN.png files, shown as a second panel.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::MalformedManifest(_) | Error::TooFewVideos { .. } | Error::WeightsMismatch(_) | Error::VersionMismatch(_) => 2,
        Error::Io { .. }
        | Error::MissingManifest(_)
        | Error::Decode { .. }
        | Error::CountMismatch { .. }
        | Error::CorruptArchive(_)
        | Error::UnknownVideo(_)
        | Error::EmptyInput(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 1,
    }
}

fn parse_frames(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::InvalidConfig(format!("--frames expects N or LO-HI, got {s:?}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn video_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "video".into())
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Synth {
            config,
            out,
            videos,
            frames,
            seed,
            size,
        } => {
            let mut cfg = match config {
                Some(p) => load_synth_config(&p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = size {
                cfg.image_size = s;
            }
            let range = frames.as_deref().map(parse_frames).transpose()?;
            let m = generate_dataset(&cfg, videos, range, &out)?;
            println!(
                "wrote {} videos, {} frames ({}x{}) to {}",
                m.videos.len(),
                m.total_frames(),
                m.canonical_size[0],
                m.canonical_size[1],
                out.display()
            );
            for v in &m.videos {
                println!("  {}  {} frames", v.id, v.frames);
            }
        }
        Command::Train {
            config,
            fold,
            seed,
            epochs,
            steps_per_epoch,
            data,
            out,
        } => {
            let mut exp = ExperimentConfig::load(&config)?;
            if let Some(f) = fold {
                exp.folds = Some(vec![f]);
            }
            if let Some(s) = seed {
                exp.train.seed = s;
            }
            if let Some(e) = epochs {
                exp.train.epochs = e;
            }
            if steps_per_epoch.is_some() {
                exp.train.steps_per_epoch = steps_per_epoch;
            }
            if let Some(d) = data {
                exp.data = d;
            }
            if let Some(o) = out {
                exp.out = o;
            }
            let (data, folds) = prepare_experiment(&exp)?;
            let grid = exp.model_configs();
            let outcomes = run_experiment(&grid, &exp.train, &data, &folds, &exp.out)?;
            let mut failed = None;
            for o in &outcomes {
                match &o.error {
                    None => println!("{}: {} fold(s) done", o.slug, o.reports.len()),
                    Some(e) => {
                        println!("{}: FAILED ({e})", o.slug);
                        failed.get_or_insert_with(|| e.clone());
                    }
                }
            }
            println!("summary: {}", exp.out.join(kfseg::harness::SUMMARY_FILE).display());
            if outcomes.iter().all(|o| o.error.is_some()) {
                if let Some(e) = failed {
                    return Err(if e.contains("non-finite") {
                        Error::NonFiniteLoss { epoch: 0, step: 0 }
                    } else {
                        Error::State(e)
                    });
                }
            }
        }
        Command::Eval {
            checkpoint,
            data,
            fold,
            k_folds,
            seed,
            threshold,
            out,
        } => {
            let meta = read_meta(&checkpoint)?;
            let manifest = load_manifest(&data)?;
            let folds = split_manifest(&manifest, k_folds, seed.unwrap_or(meta.seed))?;
            let spec = folds
                .get(fold)
                .ok_or_else(|| Error::InvalidConfig(format!("fold {fold} out of range (k = {k_folds})")))?;
            let dataset = load_dataset(&manifest, num_workers())?;
            let m = evaluate_checkpoint(&checkpoint, spec, &dataset, threshold, out.as_deref())?;
            let r = &m.report;
            println!(
                "fold {fold}: {} frames  DSC {}  P {}  R {}  detection failures {:.1}%",
                r.frames,
                r.dsc.format(2),
                r.precision.format(2),
                r.recall.format(2),
                100.0 * r.detection_failure_rate
            );
        }
        Command::Infer {
            checkpoint,
            video,
            out,
            threshold,
        } => {
            let (model, _, _) = load_checkpoint::<f32>(&checkpoint, None)?;
            let seq = load_video_dir(&video, &video_name(&video), model.config().encoder.input_size, false)?;
            let preds = predict_video(&model, &seq, threshold, true)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for m in &preds {
                let path = out.join(pred_file_name(m.frame_index));
                kfseg::datamodel::mask_to_png(m)
                    .save(&path)
                    .map_err(|e| Error::Io {
                        path: path.clone(),
                        source: std::io::Error::other(e.to_string()),
                    })?;
            }
            println!("wrote {} predicted masks to {}", preds.len(), out.display());
        }
        Command::Report { runs, out } => {
            let table = summarize_runs(&runs)?;
            let out = out.unwrap_or_else(|| runs.join(kfseg::harness::SUMMARY_FILE));
            std::fs::write(&out, &table).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            print!("{table}");
        }
        Command::Overlay { video, pred, gt, out } => {
            let preds = load_masks_dir(&pred, "pred_")?;
            let (h, w) = preds
                .first()
                .map(|m| (m.height, m.width))
                .ok_or_else(|| Error::EmptyInput(format!("no pred_*.png in {}", pred.display())))?;
            let name = video_name(&video);
            let seq = load_video_dir(&video, &name, [h, w], false)?;
            let gts = gt
                .map(|g| -> Result<Vec<MaskFrame>, Error> {
                    load_masks_dir(&g, "mask_")?
                        .into_iter()
                        .map(|m| {
                            let px: Vec<f32> = m.pixels.iter().map(|p| *p as f32).collect();
                            MaskFrame::new(m.frame_index, h, w, binarize_resized(&px, m.height, m.width, h, w))
                        })
                        .collect()
                })
                .transpose()?;
            let n = write_overlays(&seq.frames, &preds, gts.as_deref(), &name, &out)?;
            println!("wrote {n} overlays to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
