#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use gapforge_cli::{apply_seed_override, parse_document, parse_override, run_suite, validate_config, RawConfig};
use toml::Value;

/// Run a gapforge experiment suite.
#[derive(Debug, Parser)]
#[command(name = "gapforge", version)]
struct Cli {
    /// fixed-point, gaps, gap-scan, bounds, figure2, rates, noisy-vi or gvi-mvi.
    suite: String,
    /// TOML config with dotted keys or tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set operator.alpha=0.5`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default out/<suite>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow parameters outside the guaranteed range (alpha >= omega, omega >= 2/(1+gamma), alpha >= 1).
    #[arg(long)]
    unsafe_params: bool,
}

fn raw_config(cli: &Cli) -> anyhow::Result<RawConfig> {
    let mut raw = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_document(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RawConfig::new(),
    };
    for item in &cli.set {
        let (key, value) = parse_override(item)?;
        raw.insert(key, value);
    }
    raw.insert("suite".into(), Value::String(cli.suite.clone()));
    if let Some(out) = &cli.out {
        raw.insert("output.dir".into(), Value::String(out.display().to_string()));
    }
    if cli.unsafe_params {
        raw.insert("operator.unsafe".into(), Value::Boolean(true));
    }
    if let Ok(seed) = std::env::var("GAPFORGE_SEED") {
        let seed: u64 = seed
            .trim()
            .parse()
            .context("GAPFORGE_SEED must be a non-negative integer")?;
        apply_seed_override(&mut raw, seed);
    }
    Ok(raw)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = raw_config(&cli)
        .and_then(|raw| Ok(validate_config(&raw)?))
        .and_then(|config| {
            let manifest = run_suite(&config)?;
            Ok((config, manifest))
        });
    match result {
        Ok((config, manifest)) => {
            print!("{}", manifest.summary());
            println!(
                "{} in {:.2}s, {} files written to {}",
                manifest.suite,
                manifest.duration_secs,
                manifest.files.len() + 2,
                config.output.dir.display()
            );
            if manifest.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
