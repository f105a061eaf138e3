use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tspsim::montecarlo::{preset, ExperimentSpec, Metric, Runner, Scheme, Series, Sweep, PRESETS};
use tspsim::ScenarioConfig;

mod output;

#[derive(Parser)]
#[command(
    name = "simulate",
    version,
    about = "TSP / IC-TSP massive MIMO simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or an experiment file.
    Run {
        target: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        drops: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Skip the signal-level chain.
        #[arg(long)]
        analytics_only: bool,
    },
    /// Check an experiment file without running it.
    Validate { spec: PathBuf },
    /// List the built-in presets.
    Presets,
}

/// Splits `experiment.*` lines from the scenario keys.
fn split_experiment(text: &str) -> (Vec<(usize, String, String)>, String) {
    let mut exp = Vec::new();
    let mut rest = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(body) = t.strip_prefix("experiment.") {
            if let Some((k, v)) = body.split_once('=') {
                exp.push((
                    i + 1,
                    k.trim().to_string(),
                    v.trim().trim_matches('"').to_string(),
                ));
                rest.push('\n');
                continue;
            }
        }
        rest.push_str(line);
        rest.push('\n');
    }
    (exp, rest)
}

/// Experiment described by a config file. Without `experiment.preset` the
/// file defines a single operating point evaluated for TSP and IC-TSP.
fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (exp, rest) = split_experiment(&text);
    let overrides = ScenarioConfig::parse(&rest)?;
    let mut spec = None;
    for (line, k, v) in &exp {
        if k == "preset" {
            spec = Some(preset(v)?);
        } else if !matches!(
            k.as_str(),
            "name" | "seed" | "drops" | "workers" | "metrics"
        ) {
            bail!("config error at line {line}: unknown key `experiment.{k}`");
        }
    }
    let mut spec = match spec {
        Some(mut s) => {
            // keys given in the file replace the preset's
            let defaults = ScenarioConfig::default().to_flat();
            for (key, value) in overrides.to_flat() {
                let given = rest.lines().any(|l| l.trim_start().starts_with(&key));
                let differs = defaults.iter().any(|(k, v)| *k == key && *v != value);
                if given || differs {
                    s.scenario = s.scenario.with_override(&key, &value)?;
                }
            }
            s
        }
        None => ExperimentSpec {
            name: path
                .file_stem()
                .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
            scenario: overrides,
            series: vec![
                Series::new("TSP", Scheme::Tsp),
                Series::new("IC-TSP", Scheme::IcLs),
            ],
            sweep: Sweep::None,
            metrics: vec![
                Metric::Mscee,
                Metric::MsceeLmmse,
                Metric::Dominance,
                Metric::SinrUl,
                Metric::SinrCl,
                Metric::SinrPd,
                Metric::SpectralEfficiency,
                Metric::SimMscee,
                Metric::SimSinrUl,
                Metric::SimSinrCl,
                Metric::SimSinrPd,
            ],
            drops: 100,
            seed: 1,
            workers: 1,
            signal: true,
        },
    };
    for (line, k, v) in &exp {
        let bad = || anyhow::anyhow!("config error at line {line}: bad value for experiment.{k}");
        match k.as_str() {
            "name" => spec.name = v.clone(),
            "seed" => spec.seed = v.parse().map_err(|_| bad())?,
            "drops" => spec.drops = v.parse().map_err(|_| bad())?,
            "workers" => spec.workers = v.parse().map_err(|_| bad())?,
            "metrics" => {
                spec.metrics = v
                    .split(',')
                    .map(|m| Metric::from_name(m.trim()).ok_or_else(bad))
                    .collect::<Result<_>>()?;
            }
            _ => {}
        }
    }
    Ok(spec)
}

fn resolve(target: &str) -> Result<ExperimentSpec> {
    if PRESETS.contains(&target) {
        Ok(preset(target)?)
    } else {
        load_spec(Path::new(target))
    }
}

fn validate(spec: &ExperimentSpec) -> Result<()> {
    spec.validate()?;
    if let Err(errs) = spec.scenario.validate() {
        bail!("invalid scenario:\n  {}", errs.join("\n  "));
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Validate { spec } => {
            let s = load_spec(&spec)?;
            validate(&s)?;
            println!("{}: ok", spec.display());
        }
        Command::Run {
            target,
            seed,
            drops,
            workers,
            out_dir,
            analytics_only,
        } => {
            let mut spec = resolve(&target)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(d) = drops {
                spec.drops = d;
            }
            if let Some(w) = workers {
                spec.workers = w;
            }
            if analytics_only {
                spec.signal = false;
            }
            validate(&spec)?;
            let out = out_dir.unwrap_or_else(|| PathBuf::from("out").join(&spec.name));
            let start = Instant::now();
            let mut runner = Runner::new(spec.workers)?;
            let report = runner.run(&spec)?;
            let elapsed = start.elapsed().as_secs_f64();
            let written = output::write_all(&out, &spec, &report, elapsed)?;
            for n in &report.notes {
                eprintln!("note: {n}");
            }
            eprintln!(
                "wrote {written} files to {} in {elapsed:.1} s",
                out.display()
            );
        }
    }
    Ok(())
}
