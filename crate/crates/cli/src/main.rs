use std::path::PathBuf;
use std::process::ExitCode;

use arw::chaos::{gramian_monte_carlo, gramian_table};
use arw::field::{
    default_resolution, make_coefficients, make_family, synthesize_grid, write_grid_dump,
};
use arw::harness::{
    run_experiment, scan_admissible, EstimatorKind, ExperimentConfig, ExperimentKind,
};
use arw::lattice::{cache_dir, lattice_moments, load_or_census, load_or_enumerate};
use arw::nodal::{
    coarea_epsilon_estimate, count_triple_zeros, estimate_hypersurface_area,
    estimate_intersection_length,
};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "arw",
    version,
    about = "Nodal volumes of arithmetic random waves on the 3-torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate Λ_n and print N_n, E_n and lattice moments.
    Lattice {
        n: u64,
        /// Also count the m-correlations of Λ_n.
        #[arg(long)]
        census: Option<usize>,
    },
    /// Admissible n ≤ limit with the largest N_n.
    Scan {
        #[arg(long, default_value_t = 5000)]
        limit: u64,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Draw one wave and synthesize it on an M³ grid.
    Sample {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        grid: Option<usize>,
        /// Write the value channel to this path.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// One nodal-volume estimate of ℓ independent waves.
    Nodal {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        ell: usize,
        #[arg(long, default_value = "cells")]
        estimator: String,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        rep: u64,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Gramian–Hermite table as CSV, optionally with Monte Carlo columns.
    Constants {
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one experiment and write its JSON report.
    Experiment {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        ell: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        compare_n: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn print(v: &serde_json::Value) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Lattice { n, census } => {
            let dir = cache_dir();
            let freq = load_or_enumerate(&dir, n)?;
            let moments = lattice_moments(&freq);
            let census = census.map(|m| load_or_census(&dir, &freq, m)).transpose()?;
            print(&json!({
                "n": n,
                "cardinality": freq.cardinality(),
                "energy": freq.energy(),
                "admissible": freq.admissible,
                "fourth_moment_deviation": moments.fourth_moment_deviation(),
                "moments": moments,
                "census": census,
            }))?;
        }
        Command::Scan { limit, top } => {
            for (n, count) in scan_admissible(limit, top) {
                println!("{n}\t{count}");
            }
        }
        Command::Sample {
            n,
            seed,
            grid,
            dump,
        } => {
            let freq = load_or_enumerate(&cache_dir(), n)?;
            let coeffs = make_coefficients(&freq, seed, 0, None)?;
            let m = grid.unwrap_or_else(|| default_resolution(n));
            let g = synthesize_grid(&freq, &coeffs, m)?;
            if let Some(path) = &dump {
                write_grid_dump(path, &g, 0)?;
            }
            let count = g.values.len() as f64;
            let mean = g.values.iter().sum::<f64>() / count;
            let second = g.values.iter().map(|v| v * v).sum::<f64>() / count;
            print(&json!({
                "n": n,
                "cardinality": freq.cardinality(),
                "resolution": m,
                "fingerprint": g.source,
                "grid_mean": mean,
                "grid_second_moment": second,
                "dump": dump,
            }))?;
        }
        Command::Nodal {
            n,
            ell,
            estimator,
            eps,
            seed,
            rep,
            grid,
        } => {
            let freq = load_or_enumerate(&cache_dir(), n)?;
            let sets = make_family(&freq, seed, rep, ell);
            let m = grid.unwrap_or_else(|| default_resolution(n));
            let estimate = match estimator.parse::<EstimatorKind>()? {
                EstimatorKind::Coarea => {
                    let eps = eps.ok_or("--eps is required for the coarea estimator")?;
                    let grids = sets
                        .iter()
                        .map(|s| synthesize_grid(&freq, s, m))
                        .collect::<Result<Vec<_>, _>>()?;
                    coarea_epsilon_estimate(&grids, eps)?
                }
                EstimatorKind::Cells => match ell {
                    1 => estimate_hypersurface_area(&synthesize_grid(&freq, &sets[0], m)?),
                    2 => estimate_intersection_length(
                        &synthesize_grid(&freq, &sets[0], m)?,
                        &synthesize_grid(&freq, &sets[1], m)?,
                    )?,
                    3 => count_triple_zeros(&freq, &sets, Some(m))?,
                    _ => return Err(format!("ell must be 1, 2 or 3, got {ell}").into()),
                },
                EstimatorKind::Coefficient => return Err("nodal needs a grid estimator".into()),
            };
            print(&serde_json::to_value(estimate)?)?;
        }
        Command::Constants { mc_samples, seed } => {
            let mut out = csv::Writer::from_writer(std::io::stdout().lock());
            let mut header = vec!["pattern", "ell", "k", "value", "coefficient"];
            if mc_samples.is_some() {
                header.extend(["mc_mean", "mc_se"]);
            }
            out.write_record(&header)?;
            for ell in 1..=3 {
                let table = gramian_table(ell, 3);
                let mc = mc_samples.map(|s| {
                    let patterns: Vec<_> = table.iter().map(|e| e.pattern.clone()).collect();
                    gramian_monte_carlo(ell, 3, &patterns, s, seed)
                });
                for (i, e) in table.iter().enumerate() {
                    let mut row = vec![
                        e.label.to_string(),
                        e.ell.to_string(),
                        e.k.to_string(),
                        format!("{:e}", e.expectation),
                        format!("{:e}", e.coefficient),
                    ];
                    if let Some(mc) = &mc {
                        row.extend([format!("{:e}", mc[i].0), format!("{:e}", mc[i].1)]);
                    }
                    out.write_record(&row)?;
                }
            }
            out.flush()?;
        }
        Command::Experiment {
            kind,
            n,
            ell,
            reps,
            seed,
            estimator,
            eps,
            grid,
            mc_samples,
            compare_n,
            out,
        } => {
            let kind: ExperimentKind = kind.parse()?;
            let mut config = ExperimentConfig::new(kind, n, ell, reps, seed);
            if let Some(e) = estimator {
                config.estimator = e.parse()?;
            }
            config.epsilon = eps;
            config.grid_resolution = grid;
            config.mc_samples = mc_samples;
            config.compare_n = compare_n;
            config.output = out;
            config.use_cache = true;
            let report = run_experiment(&config)?;
            for c in &report.checks {
                println!(
                    "{} {}: observed {:.6e}, target {:.6e}, allowed ±{:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.label,
                    c.observed,
                    c.target,
                    c.allowed
                );
            }
            println!(
                "verdict: {:?} ({:.1} s)",
                report.verdict, report.wall_clock_seconds
            );
            return Ok(report.passed());
        }
    }
    Ok(true)
}
