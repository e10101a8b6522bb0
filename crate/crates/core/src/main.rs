use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pixgcn::config::RunConfig;
use pixgcn::features::FeatureMode;
use pixgcn::mesh::{export_obj, TemplateFile};
use pixgcn::scene::generate_scene;
use pixgcn::train::{cmd_compare, cmd_eval, cmd_train, Split, CHECKPOINT_FILE, CONFIG_FILE};
use pixgcn::{Error, Result};

#[derive(Parser)]
#[command(name = "pixgcn", version, about = "Pixel-aligned graph-convolutional mesh regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write log.csv, model.mgc and config.json.
    Train(Common),
    /// Evaluate a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to model.mgc inside --out.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train two arms on shared scenes. With one config the arms are its
    /// local and global variants; with two, they must differ only in mode.
    Compare {
        #[arg(long = "config", num_args = 1)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs_scale: Option<f64>,
    },
    /// Write the template as JSON and OBJ.
    ExportTemplate(Common),
    /// Export scenes of a split as directories of image, IUV, mesh and manifest.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Export at most this many scenes.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run config; missing fields take desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    feature_mode: Option<ModeArg>,
    #[arg(long)]
    epochs_scale: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Local,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::desk()),
    }
}

fn resolve(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = load_config(c.config.as_deref())?;
    override_config(&mut cfg, c.seed, c.epochs_scale)?;
    if let Some(m) = c.feature_mode {
        cfg.feature_mode = match m {
            ModeArg::Local => FeatureMode::Local,
            ModeArg::Global => FeatureMode::Global,
        };
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn override_config(cfg: &mut RunConfig, seed: Option<u64>, epochs_scale: Option<f64>) -> Result<()> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(f) = epochs_scale {
        cfg.scale_epochs(f)?;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (cfg, out) = resolve(&c)?;
            let outcome = cmd_train(&cfg, &out)?;
            if let Some(row) = outcome.final_row(Split::Test) {
                println!("test mpjpe {} pa-mpjpe {}", row.mpjpe, row.pa_mpjpe);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { common, checkpoint, split } => {
            let (cfg, out) = if common.config.is_none() && common.out.is_some() {
                let out = common.out.clone().unwrap();
                let archived = out.join(CONFIG_FILE);
                let mut cfg = if archived.exists() { RunConfig::load(&archived)? } else { RunConfig::desk() };
                override_config(&mut cfg, common.seed, None)?;
                (cfg, out)
            } else {
                resolve(&common)?
            };
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let result = cmd_eval(&cfg, &checkpoint, split.into(), &out)?;
            println!(
                "{} scenes: mpjpe {} pa-mpjpe {}",
                result.scenes.len(),
                result.mean.mpjpe,
                result.mean.pa_mpjpe
            );
        }
        Command::Compare {
            configs,
            seed,
            out,
            epochs_scale,
        } => {
            let (mut a, mut b) = match configs.as_slice() {
                [] | [_] => {
                    let base = load_config(configs.first().map(PathBuf::as_path))?;
                    let local = RunConfig {
                        feature_mode: FeatureMode::Local,
                        ..base.clone()
                    };
                    let global = RunConfig {
                        feature_mode: FeatureMode::Global,
                        ..base
                    };
                    (local, global)
                }
                [pa, pb] => (RunConfig::load(pa)?, RunConfig::load(pb)?),
                _ => return Err(Error::Config("compare takes one or two configs".into())),
            };
            override_config(&mut a, seed, epochs_scale)?;
            override_config(&mut b, seed, epochs_scale)?;
            let out = out.unwrap_or_else(|| a.output_dir.join("compare"));
            let result = cmd_compare(&a, &b, &out)?;
            println!("{}", serde_json::to_string_pretty(&result.report)?);
        }
        Command::ExportTemplate(c) => {
            let (cfg, out) = resolve(&c)?;
            let template = cfg.template.build()?;
            std::fs::create_dir_all(&out).map_err(|source| Error::File {
                path: out.clone(),
                source,
            })?;
            TemplateFile::from_template(&template).save(&out.join("template.json"))?;
            export_obj(&template.rest_mesh(), &template, &out.join("template.obj"))?;
            println!(
                "{} vertices, {} faces, {} parts -> {}",
                template.num_vertices(),
                template.num_faces(),
                template.part_count(),
                out.display()
            );
        }
        Command::GenScenes { common, split, count } => {
            let (cfg, out) = resolve(&common)?;
            let template = cfg.template.build()?;
            let range = match split {
                SplitArg::Train => cfg.dataset.train,
                SplitArg::Test => cfg.dataset.test,
            };
            let seeds = range.seeds();
            let n = count.unwrap_or(seeds.len()).min(seeds.len());
            for &seed in &seeds[..n] {
                let scene = generate_scene(&template, &cfg.dataset.scene, seed)?;
                scene.export(&out.join(format!("scene_{seed}")), &template, cfg.dataset.scene.noise_level)?;
            }
            println!("wrote {n} scenes to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
