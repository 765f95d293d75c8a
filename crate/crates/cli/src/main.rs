use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use forgery_kit::challenge_eval::{
    bce_loss, format_leaderboard, load_leaderboard_entries, rank_leaderboard, read_predictions,
    validate_submission, write_predictions, GroundTruthSet, PhaseConfig, PhaseName, QuotaLedger, DEFAULT_BOUND,
};
use forgery_kit::checkpoint::Checkpoint;
use forgery_kit::config::RunConfig;
use forgery_kit::data_manifest::{filter_split, load_manifest, ManifestEntry, Split};
use forgery_kit::fixtures::{generate_corpus, Artifact, SyntheticSpec};
use forgery_kit::scoring::{predict_manifest, total_runtime_s, Variant};
use forgery_kit::video_ingest::FrameDirDecoder;
use forgery_kit::workflow::{collect_faces, detector_for_dir, read_face_dir, train_pipeline, write_face_dir, TrainedPipeline};
use forgery_kit::Image;

#[derive(Parser)]
#[command(name = "forgery-kit", version, about = "Face-forgery detection pipelines and log-loss evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Champion,
    #[value(name = "dual_branch")]
    DualBranch,
    Clip3d,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Champion => Variant::Champion,
            VariantArg::DualBranch => Variant::DualBranch,
            VariantArg::Clip3d => Variant::Clip3d,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Dev,
    Final,
}

impl From<PhaseArg> for PhaseName {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Dev => PhaseName::Dev,
            PhaseArg::Final => PhaseName::Final,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArtifactArg {
    Checkerboard,
    #[value(name = "boundary_seam")]
    BoundarySeam,
    None,
}

impl From<ArtifactArg> for Artifact {
    fn from(a: ArtifactArg) -> Self {
        match a {
            ArtifactArg::Checkerboard => Artifact::Checkerboard,
            ArtifactArg::BoundarySeam => Artifact::BoundarySeam,
            ArtifactArg::None => Artifact::None,
        }
    }
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to start from when no config file is given.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Run seed; overrides the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset run configuration as TOML.
    InitConfig {
        #[arg(long, value_enum, default_value = "champion")]
        variant: VariantArg,
        #[arg(long)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with face boxes, manifest and ground truth.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        n_videos: usize,
        #[arg(long, default_value_t = 15)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, value_enum, default_value = "checkerboard")]
        artifact: ArtifactArg,
        #[arg(long)]
        seed: u64,
    },
    /// Crop faces from sampled frames into a directory with a face index.
    ExtractFaces {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Output directory.
        #[arg(long, env = "FORGERY_KIT_CACHE")]
        out: PathBuf,
    },
    /// Train the configured pipeline and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Face directory from extract-faces to train from.
        #[arg(long)]
        faces: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every video in a manifest and write a prediction file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the bounded log loss of a prediction file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOUND)]
        bound: f64,
        /// Also check the submission against this phase's rules.
        #[arg(long, value_enum)]
        phase: Option<PhaseArg>,
        /// Measured runtime in seconds, for the phase check.
        #[arg(long, default_value_t = 0.0)]
        runtime: f64,
        /// Quota ledger file; the evaluation is recorded when it passes.
        #[arg(long, requires = "team")]
        ledger: Option<PathBuf>,
        #[arg(long)]
        team: Option<String>,
    },
    /// Rank teams by loss, then runtime.
    Leaderboard {
        /// JSON array or JSON lines of {team, bce_loss, runtime_s}.
        #[arg(long)]
        entries: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn run_config(args: &ConfigArgs, need_seed: bool) -> Result<RunConfig> {
    let cfg = match (&args.config, args.variant) {
        (Some(path), variant) => {
            let cfg = RunConfig::load(path)?;
            if let Some(v) = variant {
                if Variant::from(v) != cfg.pipeline.variant {
                    bail!("--variant {} conflicts with {} in {}", Variant::from(v), cfg.pipeline.variant, path.display());
                }
            }
            cfg
        }
        (None, variant) => {
            if need_seed && args.seed.is_none() {
                bail!("--seed is required without --config");
            }
            RunConfig::preset(variant.map(Variant::from).unwrap_or(Variant::Champion), args.seed.unwrap_or(0))
        }
    };
    Ok(match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn manifest_entries(flag: Option<&PathBuf>, cfg: &RunConfig, split: Option<Split>) -> Result<Vec<ManifestEntry>> {
    let path = flag
        .or(cfg.paths.manifest.as_ref())
        .ok_or_else(|| anyhow!("no manifest: pass --manifest or set paths.manifest"))?;
    let entries = load_manifest(path)?;
    let entries = match split {
        Some(s) => filter_split(&entries, s),
        None => entries,
    };
    if entries.is_empty() {
        bail!("manifest {} has no matching entries", path.display());
    }
    Ok(entries)
}

fn cmd_extract_faces(args: &ConfigArgs, manifest: Option<&PathBuf>, split: Option<SplitArg>, out: &Path) -> Result<()> {
    let cfg = run_config(args, false)?;
    let entries = manifest_entries(manifest, &cfg, split.map(Split::from))?;
    let p = &cfg.pipeline;
    let videos = collect_faces(&entries, &FrameDirDecoder, p.n_frames, p.crop_factor, p.out_size)?;
    let index = write_face_dir(out, &videos)?;
    let n: usize = videos.iter().map(|v| v.faces.len()).sum();
    println!("{n} faces from {} videos -> {}", videos.len(), index.display());
    Ok(())
}

fn cmd_train(
    args: &ConfigArgs,
    manifest: Option<&PathBuf>,
    split: SplitArg,
    faces: Option<&PathBuf>,
    epochs: Option<usize>,
    out: Option<&PathBuf>,
) -> Result<()> {
    let mut cfg = run_config(args, true)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let out = out
        .or(cfg.paths.checkpoint.as_ref())
        .ok_or_else(|| anyhow!("no checkpoint path: pass --out or set paths.checkpoint"))?
        .clone();
    let entries = manifest_entries(manifest, &cfg, Some(split.into()))?;
    let cached: Option<BTreeMap<String, Vec<Image>>> = faces.map(|d| read_face_dir(d)).transpose()?;
    let (trained, report) = train_pipeline(&cfg, &entries, &FrameDirDecoder, cached.as_ref())?;
    trained.to_checkpoint(&cfg.pipeline).save(&out)?;
    for (name, log) in &report.logs {
        if let Some(last) = log.epochs.last() {
            println!("{name}: {} epochs, final loss {:.4}", log.epochs.len(), last.mean_loss);
        }
    }
    println!(
        "trained {} on {} videos ({} faces) -> {}",
        cfg.pipeline.variant,
        report.n_videos,
        report.n_faces,
        out.display()
    );
    Ok(())
}

fn cmd_predict(checkpoint: &Path, manifest: &Path, split: Option<SplitArg>, workers: usize, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (trained, pipeline) = TrainedPipeline::from_checkpoint(&ckpt)?;
    let entries = load_manifest(manifest)?;
    let entries = match split {
        Some(s) => filter_split(&entries, s.into()),
        None => entries,
    };
    let preds = predict_manifest(&pipeline, &entries, &FrameDirDecoder, &trained.into_models(), &detector_for_dir, workers)?;
    let records: Vec<_> = preds.iter().map(|p| p.record()).collect();
    write_predictions(out, &records)?;
    eprintln!("{} videos scored in {:.2} s", preds.len(), total_runtime_s(&preds));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    predictions: &Path,
    truth: &Path,
    bound: f64,
    phase: Option<PhaseArg>,
    runtime: f64,
    ledger: Option<&PathBuf>,
    team: Option<&str>,
) -> Result<()> {
    let preds = read_predictions(predictions)?;
    let truth = GroundTruthSet::load(truth)?;
    if let Some(phase) = phase {
        let phase = PhaseConfig::named(phase.into());
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let ledger = ledger.map(QuotaLedger::new);
        let prior = match (&ledger, team) {
            (Some(l), Some(t)) => l.used(t, &phase, now)?,
            _ => 0,
        };
        let report = validate_submission(&preds, &truth, &phase, runtime, prior);
        if !report.is_valid() {
            bail!("submission rejected: {}", report.failures().join("; "));
        }
        if let (Some(l), Some(t)) = (&ledger, team) {
            l.record(t, phase.name, now)?;
        }
    }
    println!("{:.6}", bce_loss(&preds, &truth, bound)?);
    Ok(())
}

fn cmd_leaderboard(entries: &Path, json: bool) -> Result<()> {
    let ranked = rank_leaderboard(&load_leaderboard_entries(entries)?);
    if json {
        println!("{}", serde_json::to_string_pretty(&ranked)?);
    } else {
        print!("{}", format_leaderboard(&ranked));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { variant, seed, out } => {
            let text = RunConfig::preset(variant.into(), seed).to_toml();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::GenFixtures {
            out,
            n_videos,
            frames,
            size,
            artifact,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_videos,
                frames_per_video: frames,
                image_size: size,
                fake_artifact: artifact.into(),
                seed,
            };
            let corpus = generate_corpus(&spec, &out)?;
            println!(
                "{} videos -> {} (truth {})",
                corpus.entries.len(),
                corpus.manifest_path.display(),
                corpus.truth_path.display()
            );
            Ok(())
        }
        Command::ExtractFaces {
            cfg,
            manifest,
            split,
            out,
        } => cmd_extract_faces(&cfg, manifest.as_ref(), split, &out),
        Command::Train {
            cfg,
            manifest,
            split,
            faces,
            epochs,
            out,
        } => cmd_train(&cfg, manifest.as_ref(), split, faces.as_ref(), epochs, out.as_ref()),
        Command::Predict {
            checkpoint,
            manifest,
            split,
            workers,
            out,
        } => cmd_predict(&checkpoint, &manifest, split, workers, &out),
        Command::Evaluate {
            predictions,
            truth,
            bound,
            phase,
            runtime,
            ledger,
            team,
        } => cmd_evaluate(&predictions, &truth, bound, phase, runtime, ledger.as_ref(), team.as_deref()),
        Command::Leaderboard { entries, json } => cmd_leaderboard(&entries, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
