use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use evifuse::config::KeyValues;
use evifuse::data::{synth_generate, write_csv};
use evifuse::harness::{
    evaluate_seed, run_experiment, train_seed, write_combined_report, ExperimentConfig, SUMMARY_FILE,
};
use evifuse::metrics::{parse_report_csv, summarize};
use evifuse::{Error, Result};

#[derive(Parser)]
#[command(name = "evifuse", version, about = "Evidence-weighted decision fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines)
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Branches fed to the fusion rules, e.g. `a,b,fusion`
    #[arg(long)]
    fusion_set: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset, its schema and generator truth as files
    Synth(Common),
    /// Train backbones and evidence networks
    Train(Common),
    /// Evaluate previously trained systems on the test split
    Evaluate(Common),
    /// Train and evaluate every seed, then write combined reports
    Run(Common),
    /// Summarize report CSVs (defaults to `<out-dir>/report.csv`)
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        reports: Vec<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", c.config.display())))?;
    let mut kv = KeyValues::parse(&text)?;
    if let Some(seed) = c.seed {
        kv.set("seeds", seed.to_string());
    }
    if let Some(dir) = &c.out_dir {
        kv.set("out_dir", dir.to_string_lossy());
    }
    if let Some(set) = &c.fusion_set {
        kv.set("fusion_set", set.as_str());
    }
    let base = c.config.parent().unwrap_or_else(|| Path::new("."));
    ExperimentConfig::from_key_values(kv, base)
}

fn synth(config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)?;
    for &seed in &config.seeds {
        let cfg = config
            .synth_config(seed)
            .ok_or_else(|| Error::Config("`synth` needs `data.source = synthetic`".into()))?;
        let (samples, truth) = synth_generate(&cfg)?;
        let dir = config.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        write_csv(fs::File::create(dir.join("data.csv"))?, &cfg.schema(), &samples)?;
        fs::write(dir.join("schema.txt"), cfg.schema().to_text())?;
        fs::write(dir.join("truth.csv"), truth.to_csv())?;
        info!("seed {seed}: wrote {} samples to {}", samples.len(), dir.display());
    }
    Ok(())
}

fn report(out_dir: &Path, reports: &[PathBuf]) -> Result<()> {
    let paths = if reports.is_empty() {
        vec![out_dir.join("report.csv")]
    } else {
        reports.to_vec()
    };
    let mut rows = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        rows.extend(parse_report_csv(&text)?);
    }
    print!("{}", summarize(&rows));
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => synth(&load_config(&c)?),
        Command::Train(c) => {
            let config = load_config(&c)?;
            for &seed in &config.seeds {
                let system = train_seed(&config, seed)?;
                info!("seed {seed}: trained {} parameters", system.num_params());
            }
            Ok(())
        }
        Command::Evaluate(c) => {
            let config = load_config(&c)?;
            for &seed in &config.seeds {
                evaluate_seed(&config, seed)?;
            }
            print!("{}", write_combined_report(&config)?);
            Ok(())
        }
        Command::Run(c) => {
            let config = load_config(&c)?;
            run_experiment(&config)?;
            print!("{}", fs::read_to_string(config.out_dir.join(SUMMARY_FILE))?);
            Ok(())
        }
        Command::Report { out_dir, reports } => report(&out_dir, &reports),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
