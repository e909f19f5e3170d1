use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crashcast::config::{EvalMode, RunConfig};
use crashcast::pipeline::{emit_plot_data, write_synthetic, Pipeline, PlotData};
use crashcast::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "crashcast", version, about = "Drawdown-risk forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    /// Use a built-in synthetic scenario instead of price files.
    #[arg(long, global = true)]
    synthetic: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "in_sample")]
    InSample,
    #[value(name = "walk_forward")]
    WalkForward,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and align price files into panel.csv.
    Ingest,
    /// Compute labels and the candidate feature matrix.
    Features,
    /// Variance/correlation filtering and MI ranking.
    Select,
    /// Grid search and fit the ensemble; writes model and predictions.
    Train,
    /// Classification report and ROC-AUC of the stored predictions.
    Evaluate,
    /// Shapley regime tables and permutation importance.
    Attribute,
    /// Long/short backtest of the stored predictions.
    Backtest,
    /// Every stage in order, plus plot data and a manifest.
    Run,
    /// Write a synthetic scenario's price files and truth to --out.
    Synth,
    /// Chart-ready CSV tables from an earlier run's artifacts.
    PlotData {
        #[arg(long, default_value = "all")]
        which: String,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            Mode::InSample => EvalMode::InSample,
            Mode::WalkForward => EvalMode::WalkForward,
        };
    }
    if let Some(name) = &cli.synthetic {
        cfg.data.synthetic = Some(name.clone());
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    if let Command::Synth = cli.command {
        let name = cfg.data.synthetic.clone().ok_or_else(|| Error::Config("synth needs --synthetic NAME".into()))?;
        let (_, truth) = write_synthetic(&name, cfg.seed, &cfg.out)?;
        println!("wrote {} with {} planted crashes to {}", name, truth.crashes.len(), cfg.out.display());
        return Ok(());
    }
    if let Command::PlotData { which } = &cli.command {
        let which: PlotData = which.parse()?;
        for (name, text) in emit_plot_data(&cfg.out, which)? {
            let path = cfg.out.join(&name);
            std::fs::write(&path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            println!("{}", path.display());
        }
        return Ok(());
    }

    let mut p = Pipeline::new(cfg)?;
    match &cli.command {
        Command::Ingest => {
            let panel = p.ingest()?;
            println!("{} dates x {} symbols", panel.len(), panel.symbols.len());
        }
        Command::Features => {
            let panel = p.load_panel()?;
            let prepared = p.features(panel)?;
            println!(
                "{} feature rows x {} columns; label base rate {:.4}",
                prepared.features.n_rows(),
                prepared.features.n_cols(),
                prepared.labels.base_rate()
            );
        }
        Command::Select => {
            let prepared = p.load_prepared()?;
            let r = p.select(&prepared)?;
            println!("selected {} of {} candidates", r.selected.len(), r.candidates);
        }
        Command::Train => {
            let prepared = p.load_prepared()?;
            let selection = p.load_selection()?;
            let t = p.train(&prepared, &selection)?;
            println!("trained on {} features; {} predictions", t.model.selected_features.len(), t.predictions.p.len());
        }
        Command::Evaluate => {
            let pr = p.load_predictions()?;
            let folds = p.load_folds()?;
            let e = p.evaluate(&pr, &folds)?;
            print!("roc_auc: {}\n\n{}", e.roc_auc, e.report.to_text_table());
        }
        Command::Attribute => {
            let prepared = p.load_prepared()?;
            let model = p.load_model()?;
            let folds = p.load_folds()?;
            let a = p.attribute(&prepared, &model, &folds)?;
            for (f, v) in a.regimes.crash.ranked.iter().take(10) {
                println!("crash {f} {v}");
            }
        }
        Command::Backtest => {
            let prepared = p.load_prepared()?;
            let pr = p.load_predictions()?;
            let b = p.backtest(&prepared, &pr)?;
            print!("{}", b.metrics_csv());
        }
        Command::Run => {
            let s = p.run()?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Synth | Command::PlotData { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
