//! `scalora` command-line runner.
//!
//! ```text
//! scalora run --method scalora --steps 1000 --out scalora.csv
//! scalora compare --methods full,lora,scalora --out fig1.csv
//! scalora selftest
//! ```

mod output;
mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use scalora::checkpoint::save_layer;
use scalora::trainer::{Method, MetricsRow, Trainer};
use scalora::verify::{run_selftest, SelftestOptions, SuiteReport};

use output::MetricsWriter;
use settings::{ConfigError, RunFlags, RunSpec, SEED_ENV};

#[derive(Parser, Debug)]
#[command(name = "scalora", version, about = "LoRA with optimal adapter rescaling on a linear regression task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one method and write its per-step metrics
    Run {
        /// full, lora, scalora or scalora-i
        #[arg(long)]
        method: Option<Method>,
        #[command(flatten)]
        flags: RunFlags,
        /// Save the final adapter layer in the binary checkpoint format
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train several methods on the same task and merge their metrics
    Compare {
        /// Comma-separated list, at least two
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Check the closed-form solvers against independent oracles
    Selftest {
        /// Swap the scalar case order so the scalar suite must fail
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<scalora::Error>() {
        Some(scalora::Error::InvalidConfig(_) | scalora::Error::InvalidParameter(_)) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    let seed_env = std::env::var(SEED_ENV).ok();
    match command {
        Command::Run {
            method,
            flags,
            checkpoint,
        } => {
            let spec = flags.resolve(method, seed_env.as_deref())?;
            cmd_run(&spec, checkpoint.as_deref())
        }
        Command::Compare { methods, flags } => {
            if methods.len() < 2 {
                return Err(ConfigError("compare needs at least two methods".into()).into());
            }
            let specs = methods
                .iter()
                .map(|&m| flags.resolve_for_compare(m, seed_env.as_deref()))
                .collect::<anyhow::Result<Vec<_>>>()?;
            cmd_compare(&specs)
        }
        Command::Selftest { inject_fault, seed } => cmd_selftest(SelftestOptions { seed, inject_fault }),
    }
}

fn writer_for(spec: &RunSpec) -> anyhow::Result<Option<MetricsWriter>> {
    spec.out.as_deref().map(|p| MetricsWriter::create(p, spec.format)).transpose()
}

/// Summary lines go to stderr when the metrics themselves use stdout.
fn summary_sink(spec: &RunSpec) -> Box<dyn Write> {
    if spec.out.as_deref() == Some(Path::new("-")) {
        Box::new(std::io::stderr())
    } else {
        Box::new(std::io::stdout())
    }
}

fn emitted(spec: &RunSpec, row: &MetricsRow) -> bool {
    row.step.is_multiple_of(spec.emit_every) || row.step + 1 == spec.train.steps
}

fn summary(method: Method, last: &MetricsRow, seconds: f64) -> String {
    format!(
        "{method}: steps {} final loss {} cum_rank {} wall {seconds:.3} s",
        last.step + 1,
        output::real(last.loss),
        last.cum_rank
    )
}

fn cmd_run(spec: &RunSpec, checkpoint: Option<&Path>) -> anyhow::Result<ExitCode> {
    if checkpoint.is_some() && spec.train.method == Method::Full {
        return Err(ConfigError("--checkpoint needs an adapter method".into()).into());
    }
    let mut writer = writer_for(spec)?;
    let start = Instant::now();
    let mut trainer = Trainer::<f64>::new(spec.train.clone())?;
    let mut last = None;
    for _ in 0..spec.train.steps {
        let row = trainer.step()?;
        if let Some(w) = writer.as_mut() {
            if emitted(spec, &row) {
                w.write(spec.train.method.name(), &row)?;
            }
        }
        last = Some(row);
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    let seconds = start.elapsed().as_secs_f64();
    if let (Some(path), Some(layer)) = (checkpoint, trainer.layer()) {
        save_layer(layer, path).with_context(|| format!("saving checkpoint {}", path.display()))?;
    }
    let last = last.expect("at least one step");
    writeln!(summary_sink(spec), "{}", summary(spec.train.method, &last, seconds))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(specs: &[RunSpec]) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let runs: Vec<anyhow::Result<(Vec<MetricsRow>, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| {
                scope.spawn(move || {
                    let t = Instant::now();
                    let rows = scalora::trainer::train(&spec.train)?;
                    Ok((rows, t.elapsed().as_secs_f64()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("worker panicked"))))
            .collect()
    });
    let runs = runs.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let first = &specs[0];
    let mut writer = writer_for(first)?;
    if let Some(w) = writer.as_mut() {
        for (spec, (rows, _)) in specs.iter().zip(&runs) {
            for row in rows.iter().filter(|r| emitted(spec, r)) {
                w.write(spec.train.method.name(), row)?;
            }
        }
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    let mut sink = summary_sink(first);
    for (spec, (rows, seconds)) in specs.iter().zip(&runs) {
        writeln!(sink, "{}", summary(spec.train.method, rows.last().expect("steps >= 1"), *seconds))?;
    }
    writeln!(sink, "total wall {:.3} s", start.elapsed().as_secs_f64())?;
    Ok(ExitCode::SUCCESS)
}

fn print_reports(reports: &[SuiteReport]) {
    println!(
        "{:<20} {:>9} {:>8} {:>12} {:>10}  status",
        "suite", "instances", "failures", "max error", "tolerance"
    );
    for r in reports {
        println!(
            "{:<20} {:>9} {:>8} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.instances,
            r.failures,
            r.max_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
}

fn cmd_selftest(opts: SelftestOptions) -> anyhow::Result<ExitCode> {
    let reports = run_selftest(opts)?;
    print_reports(&reports);
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        println!("all {} suites passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} suites failed", reports.len());
        Ok(ExitCode::from(1))
    }
}
