//! Command-line experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajpriv::pipeline::{
    self, compare_equal_qos, run_point, sweep, RunSettings, Scenario,
};
use trajpriv::scenario::{CompareConfig, ScenarioConfig, SweepConfig};
use trajpriv::{MechanismKind, Result};

#[derive(Parser)]
#[command(
    name = "trajpriv",
    version,
    about = "Trajectory location-privacy experiments: seeded runs, parameter sweeps, and equal-QoS mechanism comparisons with CSV output"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file; omit to use the built-in 10x10 scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the mechanism: pf | closed | exp.
    #[arg(long)]
    mechanism: Option<String>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario at its configured parameters.
    Run(Common),
    /// Evaluate the cross product of the configured epsilon and E_m lists.
    Sweep(Common),
    /// Tune both mechanisms to equal QoS targets and compare privacy.
    Compare(Common),
    /// Quick internal consistency checks.
    Selftest(Common),
}

fn load(common: &Common) -> Result<Scenario> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default_scenario(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &common.mechanism {
        cfg.mechanism = m.parse::<MechanismKind>()?;
    }
    if let Some(reps) = common.reps {
        cfg.reps = reps;
    }
    let scn = Scenario::from_config(cfg)?;
    if !scn.self_loop_rows.is_empty() {
        eprintln!(
            "warning: {} all-zero transition rows became self-loops (first: row {})",
            scn.self_loop_rows.len(),
            scn.self_loop_rows[0]
        );
    }
    Ok(scn)
}

fn emit(common: &Common, csv: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_run(common: &Common) -> Result<()> {
    let scn = load(common)?;
    let settings = RunSettings::from_scenario(&scn);
    let result = run_point(&scn, &settings, scn.config.reps)?;
    emit(common, &pipeline::point_csv(&scn, &settings, &result))?;
    eprintln!(
        "{}: mechanism={} eps={} e_m={} reps={} mean_p={:.4} km mean_q={:.4} km",
        scn.config.name,
        settings.mechanism.label(),
        settings.epsilon,
        settings.e_m_km,
        scn.config.reps,
        result.summary.mean_p_km,
        result.summary.mean_q_km,
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let scn = load(common)?;
    let grid = scn.config.sweep.clone().unwrap_or(SweepConfig {
        epsilons: vec![0.5, 1.0, 1.5, 2.0],
        e_ms_km: vec![1.0, 2.0, 3.0],
    });
    let points = sweep(
        &scn,
        &grid.epsilons,
        &grid.e_ms_km,
        scn.config.mechanism,
        scn.config.reps,
    )?;
    emit(common, &pipeline::sweep_csv(&scn, scn.config.mechanism, &points))?;
    eprintln!(
        "{}: swept {} points x {} reps",
        scn.config.name,
        points.len(),
        scn.config.reps
    );
    Ok(())
}

fn cmd_compare(common: &Common) -> Result<()> {
    let scn = load(common)?;
    let cmp = match scn.config.compare.clone() {
        Some(c) => c,
        // no configured targets: probe the reachable QoS range and take three
        // interior points
        None => {
            let bracket = [0.1, 10.0];
            let probe = |eps: f64| -> Result<f64> {
                let settings = RunSettings {
                    epsilon: eps,
                    ..RunSettings::from_scenario(&scn)
                };
                Ok(run_point(&scn, &settings, scn.config.reps.min(20))?
                    .summary
                    .mean_q_km)
            };
            let (q_hi, q_lo) = (probe(bracket[0])?, probe(bracket[1])?);
            let (lo, hi) = (q_lo.min(q_hi), q_lo.max(q_hi));
            let targets = (1..=3)
                .map(|i| lo + (hi - lo) * i as f64 / 4.0)
                .collect();
            CompareConfig {
                qos_targets_km: targets,
                epsilon_bracket: bracket,
                reps: None,
            }
        }
    };
    let reps = cmp.reps.unwrap_or(scn.config.reps);
    let outcomes = compare_equal_qos(&scn, &cmp.qos_targets_km, cmp.epsilon_bracket, reps);
    emit(common, &pipeline::compare_csv(&scn, &outcomes))?;
    for (target, outcome) in &outcomes {
        match outcome {
            Ok(o) => eprintln!(
                "target q={:.3} km: pf eps={:.4} p={:.4} km | exp eps={:.4} p={:.4} km | relative privacy gain {:+.1}%",
                target,
                o.pf.epsilon,
                o.pf.summary.mean_p_km,
                o.baseline.epsilon,
                o.baseline.summary.mean_p_km,
                100.0 * o.relative_privacy_gain,
            ),
            Err(e) => eprintln!("target q={target:.3} km: unsolved ({e})"),
        }
    }
    Ok(())
}

fn cmd_selftest(common: &Common) -> Result<()> {
    let scn = load(common)?;
    let mut settings = RunSettings::from_scenario(&scn);
    settings.collect_detail = true;
    let reps = scn.config.reps.min(5);

    let a = run_point(&scn, &settings, reps)?;
    let b = run_point(&scn, &settings, reps)?;
    let det = pipeline::point_csv(&scn, &settings, &a) == pipeline::point_csv(&scn, &settings, &b);
    println!("determinism (same seed, byte-identical CSV): {}", verdict(det));

    let mut recompute_ok = true;
    for record in &a.records {
        for s in &record.steps {
            let d = s.detail.as_ref().expect("detail collection enabled");
            let p = trajpriv::metrics::privacy_metric(
                &d.restricted_prior,
                &d.family,
                &d.strategy,
                &scn.map,
            )?;
            let q = trajpriv::metrics::qos_loss(&d.restricted_prior, &d.family, &scn.map)?;
            recompute_ok &= (p - s.metrics.privacy_km).abs() < 1e-9
                && (q - s.metrics.qos_km).abs() < 1e-9;
        }
    }
    println!(
        "metrics recomputable from logged beliefs and pmfs (1e-9): {}",
        verdict(recompute_ok)
    );

    // every non-fallback step's protection-set diameter clears e^eps * E_m
    let threshold = settings.epsilon.exp() * settings.e_m_km;
    let diam_ok = a.records.iter().flat_map(|r| &r.steps).all(|s| {
        s.metrics.fallback_pls || s.metrics.diameter_km >= threshold - 1e-9
    });
    println!(
        "non-fallback protection sets clear e^eps * E_m: {}",
        verdict(diam_ok)
    );

    if det && recompute_ok && diam_ok {
        Ok(())
    } else {
        Err(trajpriv::Error::InvalidInput("selftest failed".into()))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(c) => cmd_run(c),
        Cmd::Sweep(c) => cmd_sweep(c),
        Cmd::Compare(c) => cmd_compare(c),
        Cmd::Selftest(c) => cmd_selftest(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
