use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pointseg::cluster::cluster_instances;
use pointseg::scene::dataset::{read_scene_files, write_generated_dataset};
use pointseg::scene::{
    read_descriptor_bin, read_point_bin, write_descriptor_bin, write_label_bin, Label, LabelArray,
    SceneSpec, Split,
};
use pointseg::train::{
    evaluate, train, write_report, write_run_files, CheckpointDir, Dataset, RunConfig, TrainState,
    CHECKPOINT_FILE,
};
use pointseg::Error;

#[derive(Parser)]
#[command(name = "pointseg", version, about = "Point cloud semantic segmentation with instance-level supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Scene spec TOML; the built-in benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        val: usize,
    },
    /// Train both stages, then evaluate on the validation split.
    Train {
        /// Output directory for the checkpoint, loss log and metrics.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by `generate`; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stage1_only: bool,
        #[arg(long)]
        no_cls_head: bool,
        #[arg(long)]
        no_recon_head: bool,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Cluster one scene's instances from its semantic labels and descriptors.
    Cluster {
        #[arg(long)]
        bin: PathBuf,
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        desc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Predict per-point semantic labels for one point file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bin: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-point descriptors here.
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::Numerical(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::benchmark(),
    })
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate { out, spec, seed, train, val } => {
            let spec = match spec {
                Some(p) => SceneSpec::load(&p)?,
                None => SceneSpec::benchmark(),
            };
            let manifest = write_generated_dataset(&out, &spec, seed, train, val)?;
            println!(
                "wrote {} train and {} val scenes to {}",
                manifest.train.len(),
                manifest.val.len(),
                out.display()
            );
        }
        Command::Train {
            out,
            config,
            data,
            seed,
            stage1_only,
            no_cls_head,
            no_recon_head,
            resume,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = data {
                cfg.data.dir = Some(d);
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.stage1_only |= stage1_only;
            cfg.train.cls_head &= !no_cls_head;
            cfg.train.recon_head &= !no_recon_head;
            cfg.validate()?;
            let mut state = if resume {
                let s = TrainState::load(&out.join(CHECKPOINT_FILE))?;
                if s.config != cfg {
                    return Err(Error::Config("checkpoint was written with a different configuration".into()).into());
                }
                s
            } else {
                TrainState::new(&cfg)?
            };
            let dataset = Dataset::load(&cfg)?;
            write_run_files(&out, &state)?;
            train(&mut state, &dataset, &mut CheckpointDir(&out))?;
            let report = evaluate(&state.model, &cfg, &dataset, Split::Val)?;
            write_report(&out, &report)?;
            print!("{}", report.to_text());
        }
        Command::Cluster { bin, label, desc, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let scene = read_scene_files(&bin, &label)?;
            let descriptors = read_descriptor_bin(&read(&desc)?)?;
            let positions: Vec<[f64; 3]> = scene.cloud.positions().collect();
            let semantic = scene.labels.semantic();
            let set = cluster_instances(&positions, &semantic, &descriptors, None, &cfg.cluster)?;
            if set.len() > u16::MAX as usize {
                return Err(Error::Argument(format!("{} instances do not fit 16-bit ids", set.len())).into());
            }
            let labels = semantic
                .iter()
                .zip(&set.assignment)
                .map(|(&s, &a)| Label::new(s, (a + 1) as u16))
                .collect();
            write(&out, &write_label_bin(&LabelArray::new(labels)))?;
            println!("{} instances", set.len());
        }
        Command::Eval { checkpoint, out, data, split } => {
            let state = TrainState::load(&checkpoint)?;
            let mut cfg = state.config.clone();
            if let Some(d) = data {
                cfg.data.dir = Some(d);
            }
            let dataset = Dataset::load(&cfg)?;
            let report = evaluate(&state.model, &cfg, &dataset, split)?;
            write_report(&out, &report)?;
            print!("{}", report.to_text());
        }
        Command::Infer { checkpoint, bin, out, descriptors } => {
            let state = TrainState::load(&checkpoint)?;
            let cloud = read_point_bin(&read(&bin)?)?;
            let inputs = pointseg::backbone::SceneInputs::prepare(
                &cloud,
                state.config.voxel_size,
                &state.model.config.backbone,
            )?;
            let pred = state.model.predict_points(&inputs)?;
            let labels = pred.iter().map(|&c| Label::new(c as u16, 0)).collect();
            write(&out, &write_label_bin(&LabelArray::new(labels)))?;
            if let Some(path) = descriptors {
                write(&path, &write_descriptor_bin(&state.model.point_descriptors(&inputs)?))?;
            }
        }
    }
    Ok(())
}
