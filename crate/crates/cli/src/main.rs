use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use peagnn::checkpoint::load_checkpoint;
use peagnn::eval::{attention_csv, attention_report, evaluate_leave_one_out};
use peagnn::experiment::{
    ablate_metapaths, ablation_csv, train_and_evaluate, write_run_dir, RunConfig,
};
use peagnn::hin::{ingest_movielens_with, kcore_filter, save_hin, IngestOptions};
use peagnn::layers::LayerKind;
use peagnn::model::{forward_all, ModelGraph};
use peagnn::par::{self, ExecMode};
use peagnn::train::TrainingData;

#[derive(Parser)]
#[command(
    name = "peagnn",
    version,
    about = "Metapath-aware graph recommender: ingest, train, evaluate, ablate"
)]
struct Cli {
    /// Worker threads for the parallel kernels (1 = sequential).
    #[arg(long, global = true, env = "PEAGNN_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw MovieLens CSVs, k-core filter and store the network.
    Ingest {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        kcore: usize,
        /// Tab-separated `movieId kind value` rows (actor, director, writer).
        #[arg(long)]
        extra_features: Option<PathBuf>,
    },
    /// Train, evaluate on the test split and write a run directory.
    Train(RunArgs),
    /// Score a checkpoint on the test candidates of its seed.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Retrain without one metapath and report the change per seed.
    Ablate {
        #[arg(long)]
        drop: String,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Mean fusion attention per metapath of a checkpoint.
    Attention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Config file plus overrides; flags win over file values.
#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    hin_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_layer)]
    layer: Option<LayerKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Comma-separated metapath names, e.g. `U-M-U,M-U-M`.
    #[arg(long, value_delimiter = ',')]
    metapaths: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_layer(s: &str) -> std::result::Result<LayerKind, String> {
    s.parse::<LayerKind>().map_err(|e| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone().into(); })*};
        }
        set!(seed, layer, lambda, batch_size, lr, epochs, n_candidates);
        if let Some(v) = &self.data_dir {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = &self.hin_dir {
            c.hin_dir = Some(v.clone());
        }
        if let Some(v) = &self.metapaths {
            c.metapaths = v.clone();
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        c.train_config().validate()?;
        Ok(c)
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn run_dir(c: &RunConfig, default_prefix: &str) -> Result<PathBuf> {
    Ok(match &c.out {
        Some(p) => p.clone(),
        None => PathBuf::from("runs").join(format!(
            "{default_prefix}-{}-seed{}",
            &c.config_hash()?[..12],
            c.seed
        )),
    })
}

fn run(cli: Cli) -> Result<()> {
    let mode = if cli.threads > 1 {
        par::init_threads(cli.threads);
        ExecMode::Auto
    } else {
        ExecMode::Sequential
    };
    match cli.command {
        Command::Ingest {
            data_dir,
            out,
            kcore,
            extra_features,
        } => {
            let opts = IngestOptions {
                extra_features,
                skip_tags: false,
            };
            let raw = ingest_movielens_with(&data_dir, &opts)?;
            let hin = if kcore > 1 {
                kcore_filter(&raw, kcore)?
            } else {
                raw
            };
            save_hin(&hin, &out)?;
            let stats = serde_json::to_string_pretty(&hin.stats())?;
            write(&out.join("stats.json"), &stats)?;
            println!("{stats}");
        }
        Command::Train(args) => {
            let c = args.resolve()?;
            let hin = c.load_network()?;
            let dir = run_dir(&c, "train")?;
            let outcome = train_and_evaluate(&hin, &c, mode)?;
            write_run_dir(&dir, &outcome)?;
            if let Some(reason) = &outcome.fit.aborted {
                log::error!("training aborted: {reason}");
            }
            println!(
                "HR@10 {:.4}  NDCG@10 {:.4}  best epoch {}  -> {}",
                outcome.test.hr_at_10,
                outcome.test.ndcg_at_10,
                outcome.fit.best_epoch,
                dir.display()
            );
        }
        Command::Evaluate { checkpoint, run } => {
            let c = run.resolve()?;
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let hin = c.load_network()?;
            if hin.content_hash() != ckpt.hin_hash {
                bail!(
                    "network hash {} does not match the checkpoint's {}",
                    hin.content_hash(),
                    ckpt.hin_hash
                );
            }
            let seed = run.seed.unwrap_or(ckpt.seed);
            let data = TrainingData::prepare(hin, seed, c.n_candidates)?;
            let graph =
                ModelGraph::build(&data.train_hin, &ckpt.params.metapaths, ckpt.params.layer)?;
            let report = evaluate_leave_one_out(
                &ckpt.params,
                &graph,
                &data.test,
                Some(&data.hin),
                seed,
                mode,
            )?;
            let out = c
                .out
                .clone()
                .unwrap_or_else(|| checkpoint.join("..").join("evaluation"));
            report.write(out.join("report.json"), Some(&out.join("per_user.csv")))?;
            println!("{}", report.to_json()?);
        }
        Command::Ablate { drop, seeds, run } => {
            let c = run.resolve()?;
            let hin = c.load_network()?;
            let dir = run_dir(&c, &format!("ablate-{drop}"))?;
            let rows = ablate_metapaths(&c, &hin, &drop, &seeds, mode)?;
            write(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
            write(
                &dir.join("ablation.json"),
                &serde_json::to_string_pretty(&rows)?,
            )?;
            write(&dir.join("config.json"), &c.resolved(&hin)?.to_json()?)?;
            print!("{}", ablation_csv(&rows));
        }
        Command::Attention { checkpoint, run } => {
            let c = run.resolve()?;
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let hin = c.load_network()?;
            if hin.content_hash() != ckpt.hin_hash {
                bail!(
                    "network hash {} does not match the checkpoint's {}",
                    hin.content_hash(),
                    ckpt.hin_hash
                );
            }
            let data = TrainingData::prepare(hin, ckpt.seed, c.n_candidates)?;
            let graph =
                ModelGraph::build(&data.train_hin, &ckpt.params.metapaths, ckpt.params.layer)?;
            let fused = forward_all(&ckpt.params, &graph, mode)?;
            let csv = attention_csv(&attention_report(&fused));
            if let Some(out) = &c.out {
                write(&out.join("attention.csv"), &csv)?;
            }
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on bad flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
