use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misfit_lab::csv::{self, Cell};
use misfit_lab::experiment::{self, Params};
use misfit_lab::{
    emit_plot_data, execute, run_suite, worker_count, Command, LabError, PlotKind, ResultRecord,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "misfit-lab",
    version,
    about = "Dislocation energies on interfaces and circles"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Material {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long = "Lambda", default_value_t = 1.0)]
    big_lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct Multistart {
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Sub {
    /// Energy of a configuration (inline JSON or file); prints the report as JSON.
    Energy {
        #[arg(long)]
        config: String,
        #[arg(long, default_value = "exact")]
        method: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Minimal energy per length at one interface length; prints the estimate as JSON.
    MinimizeCl {
        #[command(flatten)]
        material: Material,
        #[arg(long)]
        l: f64,
        #[command(flatten)]
        multistart: Multistart,
    },
    /// Minimal energy per length over a list of lengths; prints CSV.
    SweepCl {
        #[command(flatten)]
        material: Material,
        #[arg(long, value_delimiter = ',', required = true)]
        l_list: Vec<f64>,
        #[command(flatten)]
        multistart: Multistart,
    },
    /// Histogram of minimizer centers from a saved estimate; prints CSV.
    Density {
        #[arg(long)]
        from: String,
        #[arg(long, default_value_t = 8)]
        bins: usize,
        /// Histogram window as `a,b`; defaults to the whole interval.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        window: Option<Vec<f64>>,
    },
    /// Recovery configuration for a piecewise affine strain profile; prints JSON.
    Recovery {
        #[arg(long)]
        w: String,
        #[arg(long)]
        l: f64,
        #[command(flatten)]
        material: Material,
        #[command(flatten)]
        multistart: Multistart,
        #[arg(long)]
        gap_constant: Option<f64>,
    },
    /// Minimizes the circle pair energy from random starts; prints JSON.
    CircleMinimize {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pair and cutoff energies of circle points; prints JSON.
    CircleEnergy {
        #[arg(long)]
        points: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value = "both")]
        which: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Analytic against central-difference gradients; prints CSV.
    CircleGradcheck {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gap between the finite-core energy and the cutoff energy; prints CSV.
    CircleLambdaLimit {
        #[arg(long)]
        points: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        lambdas: Vec<f64>,
    },
    /// Runs a JSON manifest of experiments.
    Suite {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Projects result records onto CSV columns for plotting.
    PlotData {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Record JSON files written by `suite`.
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
}

/// Inline JSON if the argument parses as an array or object, otherwise a file path.
fn document(arg: &str) -> Value {
    match serde_json::from_str::<Value>(arg) {
        Ok(v @ (Value::Array(_) | Value::Object(_))) => v,
        _ => Value::String(arg.to_string()),
    }
}

fn material(p: &mut Params, m: &Material) {
    p.insert("lambda".into(), json!(m.lambda));
    p.insert("Lambda".into(), json!(m.big_lambda));
    p.insert("delta".into(), json!(m.delta));
}

fn multistart(p: &mut Params, m: &Multistart) {
    p.insert("restarts".into(), json!(m.restarts));
}

fn put_opt(p: &mut Params, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        p.insert(key.into(), json!(v));
    }
}

fn print_json(v: &Value) -> misfit_lab::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

const INTEGER_COLUMNS: [&str; 4] = ["trial", "n", "count", "seed"];

fn columns(out: &misfit_lab::Outcome, keys: &[&str]) -> String {
    let len = keys
        .iter()
        .map(|k| out.series.get(*k).map_or(0, Vec::len))
        .min()
        .unwrap_or(0);
    let rows: Vec<Vec<Cell>> = (0..len)
        .map(|i| {
            keys.iter()
                .map(|k| {
                    let x = out.series[*k][i];
                    if INTEGER_COLUMNS.contains(k) {
                        Cell::Int(x as u64)
                    } else {
                        Cell::Real(x)
                    }
                })
                .collect()
        })
        .collect();
    csv::table(keys, &rows)
}

fn run(cli: Cli) -> misfit_lab::Result<ExitCode> {
    let here = Path::new(".");
    let mut p = Params::new();
    match cli.command {
        Sub::Energy {
            config,
            method,
            tol,
        } => {
            p.insert("config".into(), document(&config));
            p.insert("method".into(), json!(method));
            p.insert("tol".into(), json!(tol));
            print_json(&execute(Command::Energy, &p, 0, here)?.payload)?;
        }
        Sub::MinimizeCl {
            material: m,
            l,
            multistart: s,
        } => {
            material(&mut p, &m);
            multistart(&mut p, &s);
            p.insert("l".into(), json!(l));
            print_json(&execute(Command::MinimizeCl, &p, s.seed, here)?.payload)?;
        }
        Sub::SweepCl {
            material: m,
            l_list,
            multistart: s,
        } => {
            material(&mut p, &m);
            multistart(&mut p, &s);
            p.insert("l_list".into(), json!(l_list));
            let (_, rows) = experiment::sweep_cl(&p, s.seed)?;
            let rows: Vec<Vec<Cell>> = rows
                .iter()
                .map(|r| {
                    vec![
                        Cell::Real(r.l),
                        Cell::Int(r.n_star as u64),
                        Cell::Real(r.c_l),
                        Cell::Real(r.runtime),
                    ]
                })
                .collect();
            print!("{}", csv::table(&["l", "N_star", "c_l", "runtime"], &rows));
        }
        Sub::Density { from, bins, window } => {
            p.insert("from".into(), document(&from));
            p.insert("bins".into(), json!(bins));
            if let Some(w) = window {
                p.insert("window".into(), json!(w));
            }
            let out = execute(Command::Density, &p, 0, here)?;
            print!("{}", columns(&out, &["bin_center", "count", "density"]));
        }
        Sub::Recovery {
            w,
            l,
            material: m,
            multistart: s,
            gap_constant,
        } => {
            p.insert("w".into(), document(&w));
            p.insert("l".into(), json!(l));
            material(&mut p, &m);
            multistart(&mut p, &s);
            put_opt(&mut p, "gap_constant", gap_constant);
            let out = execute(Command::Recovery, &p, s.seed, here)?;
            let mut payload = out.payload;
            if let Value::Object(map) = &mut payload {
                map.insert("F".into(), json!(out.metrics["F"]));
            }
            print_json(&payload)?;
        }
        Sub::CircleMinimize {
            n,
            rho,
            restarts,
            seed,
        } => {
            p.insert("n".into(), json!(n));
            p.insert("restarts".into(), json!(restarts));
            put_opt(&mut p, "rho", rho);
            print_json(&execute(Command::CircleMinimize, &p, seed, here)?.payload)?;
        }
        Sub::CircleEnergy {
            points,
            rho,
            which,
            lambda,
        } => {
            p.insert("points".into(), document(&points));
            p.insert("which".into(), json!(which));
            p.insert("lambda".into(), json!(lambda));
            put_opt(&mut p, "rho", rho);
            print_json(&execute(Command::CircleEnergy, &p, 0, here)?.payload)?;
        }
        Sub::CircleGradcheck { n, trials, seed } => {
            p.insert("n".into(), json!(n));
            p.insert("trials".into(), json!(trials));
            let out = execute(Command::CircleGradcheck, &p, seed, here)?;
            print!("{}", columns(&out, &["trial", "n", "relative_error"]));
        }
        Sub::CircleLambdaLimit {
            points,
            rho,
            lambda,
            lambdas,
        } => {
            p.insert("points".into(), document(&points));
            p.insert("lambda".into(), json!(lambda));
            p.insert("lambdas".into(), json!(lambdas));
            put_opt(&mut p, "rho", rho);
            let out = execute(Command::CircleLambdaLimit, &p, 0, here)?;
            print!("{}", columns(&out, &["Lambda", "delta", "energy", "gap"]));
        }
        Sub::Suite { manifest, workers } => {
            let report = run_suite(&manifest, worker_count(workers))?;
            for r in &report.records {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                match &r.error {
                    Some(e) => eprintln!("{verdict} {} ({:.2}s): {e}", r.name, r.runtime_seconds),
                    None => eprintln!("{verdict} {} ({:.2}s)", r.name, r.runtime_seconds),
                }
            }
            if let Some(path) = &report.aggregate_csv {
                println!("{}", path.display());
            }
            if report.failed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Sub::PlotData { kind, out, records } => {
            let kind: PlotKind = kind.parse()?;
            let mut loaded = Vec::with_capacity(records.len());
            for path in &records {
                let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
                    path: path.clone(),
                    source,
                })?;
                loaded.push(serde_json::from_str::<ResultRecord>(&text)?);
            }
            println!("{}", emit_plot_data(&loaded, kind, &out)?.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
