use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use embinv_core::checkpoint::Attacker;
use embinv_core::MetricsReport;
use embinv_harness::pipeline::{self, stage};
use embinv_harness::{compare, config, plot, synth};

#[derive(Parser)]
#[command(
    name = "embinv",
    version,
    about = "Train and evaluate sentence-embedding inversion attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set attacker.type=mlc`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a templated synthetic corpus and its stop-word list.
    GenCorpus {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for corpus.jsonl and stopwords.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load, index and split the corpus; print a summary.
    Prepare(ConfigArgs),
    /// Embed the corpus with the victim (cached).
    Embed(ConfigArgs),
    /// Train the attacker and write the checkpoint.
    Train(ConfigArgs),
    /// Invert the evaluation split with the saved checkpoint.
    Invert(ConfigArgs),
    /// Score the inversion dump and write the report.
    Evaluate(ConfigArgs),
    /// Threshold sweep of a multi-label attacker on the evaluation split.
    Sweep(ConfigArgs),
    /// Plot a sweep CSV as a precision-recall curve (SVG).
    PrCurve {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate several reports of the same victim and corpus.
    Compare {
        /// Output prefix; writes PREFIX.csv and PREFIX.txt.
        #[arg(long)]
        out: PathBuf,
        reports: Vec<PathBuf>,
    },
    /// Run every stage end to end.
    Run(ConfigArgs),
}

fn load(args: &ConfigArgs) -> Result<config::ExperimentConfig> {
    stage("config", || config::load(args.config.as_deref(), &args.overrides))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { n, entities, seed, out } => {
            stage("gen-corpus", || synth::write_synthetic_corpus(&out, n, entities, seed))?;
            println!("wrote {}", out.display());
        }
        Command::Prepare(a) => {
            let cfg = load(&a)?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            println!(
                "sentences {}  vocabulary {}  train/dev/test {}/{}/{}  corpus {}",
                p.sentences.len(),
                p.vocab.len(),
                p.splits[0].len(),
                p.splits[1].len(),
                p.splits[2].len(),
                p.corpus_hash
            );
        }
        Command::Embed(a) => {
            let cfg = load(&a)?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            let v = stage("embed", || pipeline::build_victim(&cfg, &p.vocab))?;
            let e = stage("embed", || pipeline::embed(&p, v.as_ref()))?;
            println!(
                "{} embeddings at {}",
                e.len(),
                pipeline::cache_path(v.victim_id(), &p.corpus_hash).display()
            );
        }
        Command::Train(a) => {
            let cfg = load(&a)?;
            stage("config", || pipeline::write_config(&cfg))?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            let v = stage("embed", || pipeline::build_victim(&cfg, &p.vocab))?;
            let e = stage("embed", || pipeline::embed(&p, v.as_ref()))?;
            let (_, m) = stage("train", || pipeline::train(&cfg, &p, &e, v.victim_id()))?;
            println!("checkpoint epoch {} loss {}", m.epoch, m.dev_loss);
        }
        Command::Invert(a) => {
            let cfg = load(&a)?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            let v = stage("embed", || pipeline::build_victim(&cfg, &p.vocab))?;
            let e = stage("embed", || pipeline::embed(&p, v.as_ref()))?;
            let att = stage("invert", || pipeline::load_checkpoint(&cfg, &p, v.victim_id()))?;
            let r = stage("invert", || pipeline::invert(&cfg, &p, &e, &att))?;
            println!("inverted {} sentences", r.len());
        }
        Command::Evaluate(a) => {
            let cfg = load(&a)?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            let v = stage("evaluate", || pipeline::build_victim(&cfg, &p.vocab))?;
            let report = stage("evaluate", || {
                let path = cfg.output_dir.join(pipeline::INVERSIONS_FILE);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let records = pipeline::parse_inversions(&text)?;
                let sweep = cfg.output_dir.join(pipeline::SWEEP_FILE);
                let sweep = sweep.exists().then_some(pipeline::SWEEP_FILE);
                pipeline::evaluate(&cfg, &p, &records, v.victim_id(), sweep)
            })?;
            print!("{}", report.to_kv());
        }
        Command::Sweep(a) => {
            let cfg = load(&a)?;
            let p = stage("prepare", || pipeline::prepare(&cfg))?;
            let v = stage("embed", || pipeline::build_victim(&cfg, &p.vocab))?;
            let e = stage("embed", || pipeline::embed(&p, v.as_ref()))?;
            let att = stage("sweep", || pipeline::load_checkpoint(&cfg, &p, v.victim_id()))?;
            let Attacker::Mlc(m) = att else {
                anyhow::bail!("stage `sweep` failed: only the mlc attacker has a threshold");
            };
            let s = stage("sweep", || pipeline::sweep(&cfg, &p, &e, &m, v.victim_id()))?;
            for pt in &s.points {
                println!(
                    "{:.2}  P {:.4}  R {:.4}  F1 {:.4}",
                    pt.threshold, pt.precision, pt.recall, pt.f1
                );
            }
            println!("best threshold {}", s.best_threshold);
        }
        Command::PrCurve { sweep, out } => {
            stage("pr-curve", || plot::emit_pr_curve(&sweep, &out))?;
            println!("wrote {}", out.display());
        }
        Command::Compare { out, reports } => {
            let (_, text) = stage("compare", || {
                let parsed = reports
                    .iter()
                    .map(|p| {
                        let t = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        MetricsReport::from_kv(&t).with_context(|| format!("parsing {}", p.display()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let tables = compare::compare_attackers(&parsed)?;
                std::fs::write(out.with_extension("csv"), &tables.0)?;
                std::fs::write(out.with_extension("txt"), &tables.1)?;
                Ok(tables)
            })?;
            print!("{text}");
        }
        Command::Run(a) => {
            let cfg = load(&a)?;
            let report = pipeline::run_experiment(&cfg)?;
            print!("{}", report.to_kv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
