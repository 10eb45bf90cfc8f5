use std::path::PathBuf;
use std::process::ExitCode;

use attr_align::channels::Side;
use attr_align::partition::ChannelKind;
use attr_align::pipeline::{self, RunConfig};
use attr_align::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attr-align", version, about = "Multi-channel attribute-aware entity alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the output directory of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Name,
    Literal,
    Digital,
    Structure,
}

impl From<Channel> for ChannelKind {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Name => ChannelKind::Name,
            Channel::Literal => ChannelKind::Literal,
            Channel::Digital => ChannelKind::Digital,
            Channel::Structure => ChannelKind::Structure,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic KG pair and gold alignment.
    Synth,
    /// Split each KG into its four channel subgraphs.
    Partition,
    /// Build a name-debiased train/valid/test split from the gold alignment.
    Hardsplit,
    /// Train one channel (all four when --channel is omitted).
    Train {
        #[arg(long, value_enum)]
        channel: Option<Channel>,
    },
    /// Embed both KGs and write similarity matrices for trained channels.
    Infer {
        #[arg(long, value_enum)]
        channel: Option<Channel>,
    },
    /// Merge the channel similarity matrices.
    Ensemble,
    /// Score a similarity matrix against the test pairs.
    Eval {
        /// Evaluate one channel instead of the ensemble.
        #[arg(long, value_enum, conflicts_with = "sim")]
        channel: Option<Channel>,
        /// Evaluate an arbitrary similarity file.
        #[arg(long)]
        sim: Option<PathBuf>,
    },
    /// Run partition, hardsplit, train, infer, ensemble and eval in order.
    Run,
    /// Print the attention table of an entity for an encoder channel.
    Explain {
        entity: String,
        #[arg(long, value_enum, default_value = "literal")]
        channel: Channel,
        /// Which graph the entity belongs to.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        kg: u8,
    },
}

fn channels(c: Option<Channel>) -> Vec<ChannelKind> {
    c.map_or(ChannelKind::ALL.to_vec(), |c| vec![c.into()])
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Synth => {
            let p = pipeline::run_synth(&cfg)?;
            println!("wrote synthetic data; settings in {}", p.display());
        }
        Command::Partition => {
            let s = pipeline::run_partition(&cfg)?;
            for (k, counts) in [("kg1", &s.kg1), ("kg2", &s.kg2)] {
                let parts: Vec<String> = counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
                println!("{k}: {}", parts.join(" "));
            }
        }
        Command::Hardsplit => {
            let s = pipeline::run_hardsplit(&cfg)?;
            println!("train={} valid={} test={}", s.train.len(), s.valid.len(), s.test.len());
        }
        Command::Train { channel } => {
            for kind in channels(channel) {
                let s = pipeline::run_train(&cfg, kind)?;
                println!("{kind}: lr={} l2={} final loss {:.6}", s.chosen_lr, s.chosen_l2, s.final_loss);
            }
        }
        Command::Infer { channel } => {
            for kind in channels(channel) {
                pipeline::run_infer(&cfg, kind)?;
                println!("{kind}: embeddings and similarities written");
            }
        }
        Command::Ensemble => {
            let s = pipeline::run_ensemble(&cfg)?;
            match s.weights {
                Some(w) => println!("svm weights {:?} (C={})", w.w, w.c),
                None => println!("averaged standardized channel scores"),
            }
        }
        Command::Eval { channel, sim } => {
            let (sim, name) = match (sim, channel) {
                (Some(p), _) => (p, "custom".to_owned()),
                (None, Some(c)) => {
                    let kind = ChannelKind::from(c);
                    (cfg.sim_path(kind.as_str(), "test"), kind.as_str().to_owned())
                }
                (None, None) => (cfg.sim_path("ensemble", "test"), "ensemble".to_owned()),
            };
            print!("{}", pipeline::run_eval(&cfg, &sim, &name)?.to_table());
        }
        Command::Run => {
            let r = pipeline::run_all(&cfg)?;
            for (kind, report) in &r.channels {
                println!("{kind:<10} {}", summary_line(report));
            }
            println!("{:<10} {}", "ensemble", summary_line(&r.ensemble));
        }
        Command::Explain { entity, channel, kg } => {
            let side = if kg == 1 { Side::Left } else { Side::Right };
            let rows = pipeline::run_explain(&cfg, channel.into(), side, &entity)?;
            print!("{}", pipeline::format_explanation(&rows));
        }
    }
    Ok(())
}

fn summary_line(r: &attr_align::evaluation::EvalReport) -> String {
    r.to_table().lines().last().unwrap_or_default().to_owned()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ATTR_ALIGN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR {}: {msg}", e.module());
            ExitCode::FAILURE
        }
    }
}
