//! `laps-sim`: run, sweep and check the prefill simulator from the shell.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use laps_core::config::Scenario;
use laps_core::cost_model::{fit_params, LatencySample};
use laps_core::engine::run;
use laps_core::queueing::{hol_penalty, ServiceMix};
use laps_core::sweep::{run_sweep, to_csv};
use laps_core::validation;
use laps_core::workload::{load_trace, Request};

#[derive(Parser)]
#[command(name = "laps-sim", version, about = "Length-aware prefill scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write metrics.json and events.log.
    Simulate(ScenarioArgs),
    /// Vary one parameter and write one CSV row per value.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Config key or alias to vary, e.g. `short_concurrency`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Print the M/G/1 wait and head-of-line penalty for a two-class mix.
    Oracle {
        /// Arrival rate per ms.
        #[arg(long)]
        lambda: f64,
        /// Fraction of short requests.
        #[arg(long)]
        p_short: f64,
        /// Short service time, ms.
        #[arg(long)]
        s_short: f64,
        /// Long service time, ms.
        #[arg(long)]
        s_long: f64,
    },
    /// Fit cost coefficients from a JSON-lines sample file.
    Fit {
        /// One `{"new_tokens","history_tokens","t_comp","t_mem"}` object per line.
        #[arg(long)]
        samples: PathBuf,
    },
    /// Run the acceptance suite.
    Validate {
        /// Run only this criterion.
        #[arg(long)]
        only: Option<u8>,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Request trace (JSON lines); synthesized from the config when absent.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long, value_parser = ["laps", "fcfs_unified", "bucket_no_disagg"])]
    policy: Option<String>,
    #[arg(long, value_parser = ["temporal", "spatial"])]
    disagg: Option<String>,
    #[arg(long)]
    instances: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_ms: Option<f64>,
    #[arg(long)]
    slo_ms: Option<f64>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<Scenario> {
        let mut sc = match &self.config {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default(),
        };
        let flags = [
            ("sim.policy", self.policy.clone()),
            ("sim.disagg", self.disagg.clone()),
            ("sim.instances", self.instances.map(|v| v.to_string())),
            ("sim.seed", self.seed.map(|v| v.to_string())),
            ("sim.duration_ms", self.duration_ms.map(|v| v.to_string())),
            ("sim.slo_ms", self.slo_ms.map(|v| v.to_string())),
        ];
        for (key, val) in flags {
            if let Some(v) = val {
                sc.set(key, &v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            sc.set(k.trim(), v.trim())?;
        }
        sc.validate()?;
        Ok(sc)
    }

    fn trace(&self) -> Result<Option<Vec<Request>>> {
        self.workload
            .as_ref()
            .map(|p| load_trace(p).with_context(|| format!("reading workload {}", p.display())))
            .transpose()
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate(args: &ScenarioArgs) -> Result<()> {
    let sc = args.scenario()?;
    let reqs = match args.trace()? {
        Some(t) => t,
        None => sc.requests()?,
    };
    let out = run(&sc.sim, &reqs)?;
    let dir = args.out_dir()?;
    write(&dir, "metrics.json", &out.report.to_json())?;
    write(&dir, "events.log", &out.log.to_text())?;
    let o = &out.report.overall;
    println!(
        "{} requests, ttft mean {:.2} ms, p90 {:.2} ms, slo violations {:.4}",
        o.count, o.ttft_mean, o.ttft_p90, o.slo_violation_rate
    );
    Ok(())
}

fn sweep(args: &ScenarioArgs, param: &str, values: &[String]) -> Result<()> {
    let sc = args.scenario()?;
    let trace = args.trace()?;
    let rows = run_sweep(&sc, param, values, trace.as_deref())?;
    let csv = to_csv(param, &rows);
    match &args.out {
        Some(_) => write(&args.out_dir()?, "sweep.csv", &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn oracle(lambda: f64, p_short: f64, s_short: f64, s_long: f64) -> Result<()> {
    let mix = ServiceMix::new(lambda, p_short, s_short, s_long)?;
    println!("rho = {}", mix.utilization());
    println!("W = {}", mix.pk_wait()?);
    println!("dW = {}", hol_penalty(&mix)?);
    Ok(())
}

fn fit(path: &Path) -> Result<()> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LatencySample =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad sample", path.display(), i + 1))?;
        samples.push(s);
    }
    let p = fit_params(&samples)?;
    println!("cost.alpha = {}", p.alpha);
    println!("cost.beta = {}", p.beta);
    println!("cost.gamma_w = {}", p.gamma_w);
    println!("cost.gamma_r = {}", p.gamma_r);
    Ok(())
}

fn validate(only: Option<u8>) -> Result<()> {
    let outcomes = match only {
        Some(id) => vec![validation::run_one(id).with_context(|| format!("no criterion {id}"))?],
        None => validation::run_all(),
    };
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    if failed > 0 {
        bail!("{failed} of {} criteria failed", outcomes.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Sweep {
            scenario,
            param,
            values,
        } => sweep(scenario, param, values),
        Cmd::Oracle {
            lambda,
            p_short,
            s_short,
            s_long,
        } => oracle(*lambda, *p_short, *s_short, *s_long),
        Cmd::Fit { samples } => fit(samples),
        Cmd::Validate { only } => validate(*only),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
