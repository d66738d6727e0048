use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use secure_semcom::harness::{
    emit_outputs, prepare_data, run_experiment, save_training_artifacts, score_files, train_schemes, ExperimentConfig, Scheme,
    SweepResult,
};
use secure_semcom::model::{Collection, ParameterBundle};
use secure_semcom::Result;

#[derive(Parser)]
#[command(name = "semcom", version, about = "Secure semantic text transmission over a simulated wiretap channel")]
struct Cli {
    /// Experiment configuration (key = value lines). Defaults to the toy setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `experiment.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scheme and save its checkpoints and loss logs.
    Train {
        #[arg(long, default_value = "deepssc")]
        scheme: Scheme,
    },
    /// Train every configured scheme, sweep SNR and write results and plots.
    Sweep,
    /// Score line-aligned text files; prints CSV to stdout.
    Score {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        bob: PathBuf,
        #[arg(long)]
        eve: Option<PathBuf>,
    },
    /// Summarize a checkpoint.
    Inspect { checkpoint: PathBuf },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::toy(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_table(result: &SweepResult) {
    println!(
        "{:<11} {:>6} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>8}",
        "scheme", "snr_db", "bleu1_bob", "bleu3_bob", "bleu1_eve", "bleu3_eve", "sbleu1", "sbleu3", "secrecy"
    );
    for r in &result.rows {
        println!(
            "{:<11} {:>6.1} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.4} {:>7.4} {:>8.4}",
            r.scheme.name(),
            r.snr_db,
            r.bleu1_bob,
            r.bleu3_bob,
            r.bleu1_eve,
            r.bleu3_eve,
            r.sbleu1,
            r.sbleu3,
            r.secrecy_proxy
        );
    }
}

fn run_score(src: &Path, bob: &Path, eve: Option<&Path>) -> Result<()> {
    let scores = score_files(src, bob, eve)?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    for s in &scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| secure_semcom::Error::Io {
        path: "<stdout>".into(),
        source: e,
    })
}

fn run_inspect(path: &Path) -> Result<()> {
    let bundle = ParameterBundle::load_checkpoint(path)?;
    let c = &bundle.config;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "checkpoint: {}", path.display());
    let _ = writeln!(
        out,
        "model: vocab {} slots {} width {} symbols/token {} layers {} heads {} ff {} channel hidden {}",
        c.vocab_size, c.max_len, c.model_dim, c.symbol_dim, c.layers, c.heads, c.ff_dim, c.channel_hidden
    );
    for coll in Collection::ALL {
        let set = bundle.set(coll);
        let _ = writeln!(
            out,
            "  {:<8} {:>8} params  {:>3} tensors{}",
            coll.name(),
            set.num_params(),
            set.tensors.len(),
            if set.frozen { "  frozen" } else { "" }
        );
    }
    let _ = writeln!(out, "total: {} params", bundle.num_params());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Score { src, bob, eve } => run_score(src, bob, eve.as_deref()),
        Command::Inspect { checkpoint } => run_inspect(checkpoint),
        Command::Train { scheme } => {
            let mut cfg = load_config(cli)?;
            cfg.schemes = vec![*scheme];
            let data = prepare_data(&cfg)?;
            let trained = train_schemes(&cfg, &data)?;
            save_training_artifacts(&cfg.output_dir, &data, &trained)?;
            for (s, log) in &trained.losses {
                if let Some(last) = log.last() {
                    eprintln!(
                        "{s}: {} steps, final ce_bob {:.4}, ce_eve {:.4}",
                        log.len(),
                        last.ce_bob,
                        last.ce_eve
                    );
                }
            }
            println!("{}", cfg.output_dir.display());
            Ok(())
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let result = run_experiment(&cfg)?;
            emit_outputs(&result, &cfg.output_dir)?;
            print_table(&result);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semcom: {e}");
            ExitCode::FAILURE
        }
    }
}
