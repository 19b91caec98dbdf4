use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use dare_core::harness::{
    build_params, run_experiment, sweep_n, ExperimentConfig, Protocol, RunRow,
};
use dare_core::scenario::Scenario;

/// Run simulated consensus experiments and emit CSV metrics.
#[derive(Parser, Debug)]
#[command(name = "dare-lab", version)]
struct Args {
    #[arg(long, default_value = "dare")]
    protocol: Protocol,
    #[arg(long, default_value = "good-case")]
    scenario: Scenario,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Fault bound; without it n must be 3t+1.
    #[arg(long)]
    t: Option<usize>,
    /// Value length in bits (per proposal for `vector`).
    #[arg(long = "L", default_value_t = 1024)]
    l_bits: u64,
    #[arg(long, default_value_t = 256)]
    kappa: u64,
    #[arg(long = "proof-kappa", default_value_t = 2048)]
    proof_kappa: u64,
    #[arg(long, default_value_t = 10)]
    delta: u64,
    /// Defaults per scenario.
    #[arg(long)]
    gst: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    reps: u64,
    /// Sweep axis, e.g. `n=16,25,36,49`.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Processes start from a 1-tick guess of delta and double timeouts.
    #[arg(long = "unknown-delta")]
    unknown_delta: bool,
    /// Write the message transcript of a single run here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let Some(values) = spec.strip_prefix("n=") else {
        bail!("only the n axis can be swept (`--sweep n=16,25,36`)");
    };
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .with_context(|| format!("bad sweep value `{v}`"))
        })
        .collect()
}

/// Configuration problems are usage errors: message and exit code 2.
fn usage_error(msg: impl std::fmt::Display) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2);
}

fn main() -> Result<()> {
    let args = Args::parse();
    let base = ExperimentConfig {
        protocol: args.protocol,
        scenario: args.scenario,
        n: args.n,
        t: args.t,
        l_bits: args.l_bits,
        kappa: args.kappa,
        proof_kappa: args.proof_kappa,
        delta: args.delta,
        gst: args.gst,
        seed: args.seed,
        unknown_delta: args.unknown_delta,
        record_transcript: args.transcript.is_some(),
    };
    let sweep = args
        .sweep
        .as_ref()
        .map(|spec| parse_sweep(spec).unwrap_or_else(|e| usage_error(e)));
    match &sweep {
        Some(ns) => {
            let distinct: std::collections::BTreeSet<_> = ns.iter().collect();
            if distinct.len() < 3 {
                usage_error(dare_core::harness::HarnessError::DegenerateSweep(
                    distinct.len(),
                ));
            }
            for &n in ns {
                let cfg = ExperimentConfig {
                    n,
                    t: Some(n.saturating_sub(1) / 3),
                    ..base.clone()
                };
                build_params(&cfg).unwrap_or_else(|e| usage_error(e));
            }
        }
        None => {
            if let Err(e) = build_params(&base) {
                usage_error(format!(
                    "{e} (pass --t to choose the fault bound explicitly)"
                ));
            }
        }
    }
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => {
            Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(RunRow::HEADER)?;
    let mut failures = 0;

    if let Some(ns) = sweep {
        let result = sweep_n(&base, &ns, args.reps).unwrap_or_else(|e| usage_error(e));
        for row in &result.rows {
            failures += usize::from(!row.ok());
            csv.write_record(row.to_record())?;
        }
        csv.flush()?;
        eprintln!(
            "{} {}: fitted slope {:.3}",
            base.protocol, base.scenario, result.fit.slope
        );
        for ((n, bits), r) in result.points.iter().zip(&result.fit.residuals) {
            eprintln!("  n={n:<4} mean L-bits={bits:<14.0} residual={r:+.4}");
        }
    } else {
        for r in 0..args.reps {
            let cfg = ExperimentConfig {
                seed: args.seed + r,
                ..base.clone()
            };
            let out = run_experiment(&cfg)?;
            failures += usize::from(!out.row.ok());
            csv.write_record(out.row.to_record())?;
            if let Some(path) = &args.transcript {
                std::fs::write(path, out.report.transcript_dump())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        csv.flush()?;
    }
    if failures > 0 {
        bail!("{failures} run(s) violated safety or liveness");
    }
    Ok(())
}
