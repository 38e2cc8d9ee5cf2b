use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomatch::pipeline::{self, MmVariant, ModelSpec, Variant, Workspace};
use geomatch::{Error, Result, RunConfig};
use geomatch_core::eval::AblationAxis;
use geomatch_core::matching::Head;

/// Geographic-context query-POI matching: benchmark generation, GC
/// extraction, the three training stages, ranking, retrieval and ablations.
#[derive(Parser, Debug)]
#[command(name = "geomatch", version)]
struct Cli {
    /// Workspace directory holding every stage's outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// TOML run config layered over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set bi.epochs=4`. Repeatable; applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Profile whose defaults the config is layered over; wins over a `profile` key in the file.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Seed for every random stream (default 17).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeadArg {
    Bi,
    Cross,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Gc,
    Text,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    QueryType,
    GcPercent,
    Truncation,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Fine-tuned model name, e.g. `bi-gc`, `cross-text`, `bi-noqgc-scratch`.
    #[arg(long)]
    model: String,
    /// Query split to score.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark into <out>/corpus.
    GenBench {
        /// TOML file of generator settings (keys of the `[bench]` table, plus `seed`).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Extract or refresh the POI and query GC caches.
    ExtractGc,
    /// Train the geographic encoder.
    PretrainGeo,
    /// Multi-modal pre-training.
    PretrainMm {
        /// `gc` trains all three tasks with GC; `text` only masked text.
        #[arg(long, value_enum, default_value = "gc")]
        variant: VariantArg,
    },
    /// Fine-tune a relevance head.
    Finetune {
        /// Relevance head to train.
        #[arg(long, value_enum)]
        head: HeadArg,
        /// Feed only the POI GC, never the query GC.
        #[arg(long, conflicts_with = "text_only")]
        no_query_gc: bool,
        /// Ignore GC entirely and start from the text-only pre-trained model.
        #[arg(long)]
        text_only: bool,
        /// Start from fresh weights instead of a pre-trained checkpoint.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Score every query's candidates and write (query, poi, score) lines.
    Rank(ModelArgs),
    /// Bi-encoder retrieval over every POI.
    Retrieve {
        #[command(flatten)]
        model: ModelArgs,
        /// Hits kept per query.
        #[arg(long, default_value_t = 100)]
        k_max: usize,
    },
    /// Ranking metrics report with one slice per query type.
    Eval(ModelArgs),
    /// Ranking metrics along one ablation axis.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        /// Axis to slice along.
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated fractions in [0, 1]; ignored for query-type.
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        levels: Vec<f64>,
    },
}

fn spec_overrides(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    Ok(table
        .into_iter()
        .map(|(k, v)| match k.as_str() {
            "seed" => format!("seed={v}"),
            _ => format!("bench.{k}={v}"),
        })
        .collect())
}

fn model_spec(name: &str) -> Result<ModelSpec> {
    ModelSpec::parse(name).ok_or_else(|| Error::Usage(format!("unknown model name {name:?}")))
}

fn run(cli: Cli) -> Result<()> {
    let mut sets = Vec::new();
    if let Some(p) = cli.profile {
        sets.push(format!("profile={}", if matches!(p, ProfileArg::Full) { "\"full\"" } else { "\"desk\"" }));
    }
    if let Command::GenBench { spec: Some(path) } = &cli.cmd {
        sets.extend(spec_overrides(path)?);
    }
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    sets.extend(cli.sets.iter().cloned());
    let cfg = RunConfig::resolve(cli.config.as_deref(), &sets)?;
    let ws = Workspace::new(&cli.out);

    match cli.cmd {
        Command::GenBench { .. } => {
            let m = pipeline::gen_bench(&ws, &cfg)?;
            println!("{} objects, {} POIs, {} queries -> {}", m.objects, m.pois, m.queries, ws.corpus_dir().display());
        }
        Command::ExtractGc => {
            let (p, q) = pipeline::extract_gc(&ws, &cfg)?;
            println!("POIs: {} computed, {} reused", p.computed, p.reused);
            println!("queries: {} computed, {} reused", q.computed, q.reused);
        }
        Command::PretrainGeo => {
            let trace = pipeline::pretrain_geo(&ws, &cfg)?;
            if let (Some(a), Some(b)) = (trace.first(), trace.last()) {
                println!("{} steps, loss {:.4} -> {:.4}", trace.len(), a.total(), b.total());
            }
        }
        Command::PretrainMm { variant } => {
            let v = match variant {
                VariantArg::Gc => MmVariant::Gc,
                VariantArg::Text => MmVariant::Text,
            };
            let trace = pipeline::pretrain_mm(&ws, &cfg, v)?;
            println!("{} steps -> {}", trace.len(), ws.mm_dir(v).display());
        }
        Command::Finetune {
            head,
            no_query_gc,
            text_only,
            from_scratch,
        } => {
            let spec = ModelSpec {
                head: match head {
                    HeadArg::Bi => Head::Bi,
                    HeadArg::Cross => Head::Cross,
                },
                variant: if text_only {
                    Variant::Text
                } else if no_query_gc {
                    Variant::NoQueryGc
                } else {
                    Variant::Gc
                },
                from_scratch,
            };
            let r = pipeline::finetune(&ws, &cfg, spec)?;
            println!(
                "{}: best epoch {} of {}, dev Recall@1 {:?}",
                spec.name(),
                r.best_epoch + 1,
                r.epoch_losses.len(),
                r.dev_recall_at_1
            );
        }
        Command::Rank(m) => {
            let spec = model_spec(&m.model)?;
            let n = pipeline::rank(&ws, &cfg, spec, &m.split)?;
            println!("{n} queries -> {}", ws.rank_dir(&spec, &m.split).display());
        }
        Command::Retrieve { model, k_max } => {
            if k_max == 0 {
                return Err(Error::Usage("--k-max must be at least 1".into()));
            }
            let r = pipeline::retrieve(&ws, &cfg, model_spec(&model.model)?, &model.split, k_max)?;
            print!("{}", r.render());
        }
        Command::Eval(m) => {
            let r = pipeline::evaluate(&ws, &cfg, model_spec(&m.model)?, &m.split)?;
            print!("{}", r.render());
        }
        Command::Ablate { model, axis, levels } => {
            let axis = match axis {
                AxisArg::QueryType => AblationAxis::QueryType,
                AxisArg::GcPercent => AblationAxis::GcPercent,
                AxisArg::Truncation => AblationAxis::Truncation,
            };
            let r = pipeline::ablate(&ws, &cfg, model_spec(&model.model)?, &model.split, axis, &levels)?;
            print!("{}", r.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
