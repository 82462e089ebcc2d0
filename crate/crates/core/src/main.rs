use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use layoutgroup_core::eval::{compare_models, evaluate, labeled_stats, CompareConfig};
use layoutgroup_core::grouping::{group_layout, GroupingHierarchy, GroupingParams};
use layoutgroup_core::layout::{parse_layout, Layout};
use layoutgroup_core::model::{ModelCheckpoint, PairModel, RelatednessModel};
use layoutgroup_core::render::{histogram_svg, render_svg};
use layoutgroup_core::synth::{generate_corpus, load_corpus, write_corpus, GeneratorSpec};
use layoutgroup_core::train::{train_with_log, TrainConfig};
use layoutgroup_core::{Error, Result};

#[derive(Parser)]
#[command(name = "layoutgroup", version, about = "Hierarchical grouping of layout elements")]
struct Cli {
    /// Root seed; overrides the seed in any spec or config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic corpus.
    Generate {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of layouts; overrides the spec.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the relatedness model and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also store Adam moments.
        #[arg(long)]
        moments: bool,
    },
    /// Print the association matrix of one layout.
    Predict {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Group one layout and write the hierarchy.
    Group {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the finest and the last k-1 levels.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Pairwise accuracy of a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        ordered_pairs: bool,
    },
    /// Train and test the baseline and both encoder variants.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Comparison settings (training config under "train").
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        ordered_pairs: bool,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Also write the element-count histogram as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Draw a layout with the groups of one level.
    Render {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn load_layout(path: &Path) -> Result<Layout> {
    parse_layout(&read(path)?)
}

fn load_model(path: &Path) -> Result<RelatednessModel> {
    RelatednessModel::from_checkpoint(&ModelCheckpoint::from_json(&read(path)?)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, n, out } => {
            let mut spec: GeneratorSpec = match spec {
                Some(p) => read_json(&p)?,
                None => GeneratorSpec::default(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(n) = n {
                spec.n_layouts = n;
            }
            let corpus = generate_corpus(&spec)?;
            write_corpus(&out, &corpus)?;
            eprintln!("wrote {} layouts to {}", corpus.len(), out.display());
        }
        Command::Train {
            corpus,
            config,
            out,
            moments,
        } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let corpus = load_corpus(&corpus)?;
            let mut model = RelatednessModel::new(cfg.model_config(), cfg.seed)?;
            let report = train_with_log(&mut model, &corpus, &cfg, |e| {
                let acc = e.holdout_accuracy.map_or("-".into(), |a| format!("{a:.4}"));
                eprintln!("epoch {:>3} loss {:.5} holdout {acc}", e.epoch, e.train_loss);
            })?;
            fs::write(&out, model.to_checkpoint(cfg.seed, moments).to_json())?;
            print_json(&report)?;
        }
        Command::Predict { layout, ckpt } => {
            let model = load_model(&ckpt)?;
            print_json(&model.predict(&load_layout(&layout)?)?)?;
        }
        Command::Group {
            layout,
            ckpt,
            params,
            out,
            levels,
        } => {
            let model = load_model(&ckpt)?;
            let params: GroupingParams = match params {
                Some(p) => read_json(&p)?,
                None => GroupingParams::default(),
            };
            let (_, mut h) = group_layout(&model, &load_layout(&layout)?, &params)?;
            if let Some(k) = levels {
                h = h.truncate(k)?;
            }
            fs::write(&out, h.to_json())?;
        }
        Command::Eval {
            corpus,
            ckpt,
            threshold,
            ordered_pairs,
        } => {
            let ck = ModelCheckpoint::from_json(&read(&ckpt)?)?;
            let model = RelatednessModel::from_checkpoint(&ck)?;
            let corpus = load_corpus(&corpus)?;
            let mut report = evaluate(&model, "model", &corpus, threshold, ordered_pairs)?;
            report.seed = Some(ck.store.seed);
            print_json(&report)?;
        }
        Command::Compare {
            corpus,
            seeds,
            config,
            threshold,
            ordered_pairs,
        } => {
            let mut cfg: CompareConfig = match config {
                Some(p) => read_json(&p)?,
                None => CompareConfig::default(),
            };
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cfg.ordered_pairs |= ordered_pairs;
            let corpus = load_corpus(&corpus)?;
            let report = compare_models(&corpus, &seeds, &cfg, |line| eprintln!("{line}"))?;
            eprint!("{}", report.table());
            print_json(&report)?;
        }
        Command::Stats { corpus, svg } => {
            let stats = labeled_stats(&load_corpus(&corpus)?)?;
            if let Some(p) = svg {
                fs::write(p, histogram_svg(&stats))?;
            }
            print_json(&stats)?;
        }
        Command::Render {
            layout,
            groups,
            level,
            out,
        } => {
            let layout = load_layout(&layout)?;
            let ids: Vec<String> = layout.elements().iter().map(|e| e.id.clone()).collect();
            let h = GroupingHierarchy::from_json(&read(&groups)?, &ids)?;
            fs::write(&out, render_svg(&layout, &h, level)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
