mod config;
mod figures;
mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use erocket::acceptance;
use erocket::analysis::{
    frequency_response, log_grid, magnitude_db, pitch_closed_loop, pitch_open_loop, step_metrics,
    step_response, FrequencyEval,
};
use erocket::sim::{format_significant, run_ensemble, run_scenario, RunSummary, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(
    name = "erocket",
    version,
    about = "Thrust-vectored rocket control and navigation testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML). Missing keys take the preset of its `variant`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted override, e.g. `guidance.k_x=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute gains, eigenvalues and the gain margin; write design.txt.
    Design(Common),
    /// Run a scenario; write trace.csv and summary.toml.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Independent runs with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Pitch loop frequency and step analysis.
    Analyze(Common),
    /// Run the canned experiments, write figures and the acceptance table.
    Reproduce(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(c: &Common) -> Result<ScenarioConfig> {
    config::load(c.config.as_deref(), &c.overrides, c.seed)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_trace(dir: &Path, name: &str, trace: &erocket::sim::SimTrace) -> Result<()> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    trace.write_csv(BufWriter::new(f))?;
    Ok(())
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Design(c) => {
            let cfg = load(&c)?;
            let text = report::design_report(&cfg)?;
            prepare_out(&c.out)?;
            write(&c.out, "design.txt", &text)?;
            print!("{text}");
            Ok(true)
        }
        Command::Simulate { common, runs } => simulate(&common, runs),
        Command::Analyze(c) => analyze(&c),
        Command::Reproduce(c) => reproduce(&c),
    }
}

#[derive(Serialize)]
struct Aggregate {
    runs: usize,
    failed: usize,
    divergence_flagged: usize,
    altitude_converged: usize,
    mean_attitude_error_std_deg: f64,
    mean_altitude_error_std: f64,
    worst_max_y_error: f64,
}

#[derive(Serialize)]
struct Ensemble {
    aggregate: Aggregate,
    runs: Vec<RunSummary>,
}

fn simulate(c: &Common, runs: usize) -> Result<bool> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    if runs <= 1 {
        let trace = run_scenario(&cfg)?;
        write_trace(&c.out, "trace.csv", &trace)?;
        let summary = RunSummary::from_trace(&cfg, &trace);
        let text = toml::to_string(&summary)?;
        write(&c.out, "summary.toml", &text)?;
        println!(
            "{}: {} samples, final x error {}, max altitude error {} m, altitude converged {}, lateral divergence {}",
            cfg.variant.name(),
            summary.samples,
            format_significant(summary.final_x_error, 6),
            format_significant(summary.max_y_error, 6),
            summary.altitude_converged,
            summary.lateral.flagged
        );
        return Ok(true);
    }

    let results = run_ensemble(&cfg, runs);
    let mut ok = Vec::new();
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => {
                warn!("run {i} failed: {e}");
                failed += 1;
            }
        }
    }
    let n = ok.len().max(1) as f64;
    let aggregate = Aggregate {
        runs,
        failed,
        divergence_flagged: ok.iter().filter(|s| s.lateral.flagged).count(),
        altitude_converged: ok.iter().filter(|s| s.altitude_converged).count(),
        mean_attitude_error_std_deg: ok.iter().map(|s| s.attitude_error_std_deg).sum::<f64>() / n,
        mean_altitude_error_std: ok.iter().map(|s| s.altitude_error_std).sum::<f64>() / n,
        worst_max_y_error: ok.iter().map(|s| s.max_y_error).fold(0.0, f64::max),
    };
    println!(
        "{} runs, {} failed, {} flagged divergent, mean std(theta) {} deg, mean std(y) {} m",
        runs,
        failed,
        aggregate.divergence_flagged,
        format_significant(aggregate.mean_attitude_error_std_deg, 6),
        format_significant(aggregate.mean_altitude_error_std, 6)
    );
    let text = toml::to_string(&Ensemble {
        aggregate,
        runs: ok,
    })?;
    write(&c.out, "ensemble.toml", &text)?;
    Ok(failed == 0)
}

fn analyze(c: &Common) -> Result<bool> {
    let cfg = load(c)?;
    let p = &cfg.plant;
    let gains = cfg.attitude.resolve_gains(p)?;
    prepare_out(&c.out)?;

    let grid = log_grid(1e-3, 1e3, 601);
    let closed = frequency_response(&pitch_closed_loop(p, &gains), &grid);
    let open = frequency_response(&pitch_open_loop(p, &gains), &grid);
    let mut csv = String::from("omega,closed_db,closed_deg,open_db,open_deg\n");
    for (i, w) in closed.omega.iter().enumerate() {
        if let Some(j) = open.omega.iter().position(|o| o == w) {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                format_significant(*w, 9),
                format_significant(closed.magnitude_db[i], 9),
                format_significant(closed.phase_deg[i], 9),
                format_significant(open.magnitude_db[j], 9),
                format_significant(open.phase_deg[j], 9)
            ));
        }
    }
    write(&c.out, "bode.csv", &csv)?;

    let (t, y) = step_response(&pitch_closed_loop(p, &gains), 1.0, 10.0, 1e-3);
    let mut step_csv = String::from("t,theta\n");
    for (a, b) in t.iter().zip(&y) {
        step_csv.push_str(&format!(
            "{},{}\n",
            format_significant(*a, 9),
            format_significant(*b, 9)
        ));
    }
    write(&c.out, "step.csv", &step_csv)?;
    write(
        &c.out,
        "pitch_bode.svg",
        &figures::pitch_bode(&closed, &open),
    )?;
    write(&c.out, "pitch_step.svg", &figures::pitch_step(&t, &y))?;

    let m = step_metrics(&t, &y, 1.0)?;
    let cl = pitch_closed_loop(p, &gains);
    let mut text = String::new();
    text.push_str(&format!("step.rise_time = {}\n", m.rise_time));
    text.push_str(&format!("step.settling_time = {}\n", m.settling_time));
    text.push_str(&format!("step.overshoot_percent = {}\n", m.overshoot));
    text.push_str(&format!(
        "step.steady_state_error = {}\n",
        m.steady_state_error
    ));
    for w in [1e-3, 100.0] {
        if let Some(h) = cl.response(w) {
            text.push_str(&format!(
                "closed_loop.magnitude_db.{w} = {}\n",
                magnitude_db(h)
            ));
        }
    }
    let gm = erocket::analysis::gain_margin(
        &pitch_open_loop(p, &gains),
        &erocket::analysis::default_grid(),
    );
    text.push_str(&format!("open_loop.gain_margin_db = {}\n", gm.margin_db()));
    if let Some(w) = gm.crossover() {
        text.push_str(&format!("open_loop.phase_crossover = {w}\n"));
    }
    write(&c.out, "analysis.txt", &text)?;
    print!("{text}");
    Ok(true)
}

fn reproduce(c: &Common) -> Result<bool> {
    if c.config.is_some() || !c.overrides.is_empty() {
        warn!("reproduce runs the built-in experiments; --config and --set are ignored");
    }
    let seed = c.seed.unwrap_or(ScenarioConfig::default().seed);
    prepare_out(&c.out)?;

    let (t, y) = acceptance::pitch_step().map_err(anyhow::Error::msg)?;
    write(&c.out, "pitch_step.svg", &figures::pitch_step(&t, &y))?;
    let (closed, open) = acceptance::pitch_bode().map_err(anyhow::Error::msg)?;
    write(
        &c.out,
        "pitch_bode.svg",
        &figures::pitch_bode(&closed, &open),
    )?;

    let lateral = run_scenario(&ScenarioConfig::reduced_lateral())?;
    write(&c.out, "lateral.svg", &figures::lateral(&lateral))?;
    let vertical = run_scenario(&ScenarioConfig::reduced_vertical())?;
    write(&c.out, "vertical.svg", &figures::vertical(&vertical))?;
    let full_cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::full_2d()
    };
    let full = run_scenario(&full_cfg)?;
    write(&c.out, "full_2d.svg", &figures::full_2d(&full))?;
    write_trace(&c.out, "full_2d.csv", &full)?;

    let results = acceptance::run_all(seed);
    let mut table = String::new();
    for r in &results {
        table.push_str(&r.line());
        table.push('\n');
    }
    let passed = results.iter().all(|r| r.passed);
    table.push_str(&format!(
        "overall: {} ({}/{} criteria)\n",
        if passed { "PASS" } else { "FAIL" },
        results.iter().filter(|r| r.passed).count(),
        results.len()
    ));
    write(&c.out, "acceptance.txt", &table)?;
    print!("{table}");
    Ok(passed)
}
