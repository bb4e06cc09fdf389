//! Named experiments. Every command reads a flat JSON parameter map and returns scalar
//! metrics, column series and a JSON payload.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use misfit_core::circle::{energy_tilde_points, random_circle_config, CircleOptions};
use misfit_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{read_file, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Energy,
    MinimizeCl,
    SweepCl,
    Density,
    Recovery,
    CircleMinimize,
    CircleEnergy,
    CircleGradcheck,
    CircleLambdaLimit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub metrics: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub payload: Value,
}

impl Outcome {
    fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    fn column(mut self, key: &str, values: Vec<f64>) -> Self {
        self.series.insert(key.to_string(), values);
        self
    }
}

pub type Params = Map<String, Value>;

fn bad(key: &str, reason: impl Into<String>) -> LabError {
    LabError::BadParameter {
        key: key.to_string(),
        reason: reason.into(),
    }
}

pub fn get_f64(p: &Params, key: &str, default: Option<f64>) -> Result<f64> {
    match p.get(key) {
        Some(v) => v.as_f64().ok_or_else(|| bad(key, "expected a number")),
        None => default.ok_or_else(|| LabError::MissingParameter(key.to_string())),
    }
}

pub fn get_usize(p: &Params, key: &str, default: Option<usize>) -> Result<usize> {
    match p.get(key) {
        Some(v) => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| bad(key, "expected a non-negative integer")),
        None => default.ok_or_else(|| LabError::MissingParameter(key.to_string())),
    }
}

pub fn get_list(p: &Params, key: &str) -> Result<Vec<f64>> {
    let v = p
        .get(key)
        .ok_or_else(|| LabError::MissingParameter(key.to_string()))?;
    let arr = v
        .as_array()
        .ok_or_else(|| bad(key, "expected an array of numbers"))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| bad(key, "expected an array of numbers"))
        })
        .collect()
}

/// Inline JSON object or a path to a JSON file.
fn get_document<T: for<'de> Deserialize<'de>>(p: &Params, key: &str, base: &Path) -> Result<T> {
    match p.get(key) {
        Some(Value::String(path)) => Ok(serde_json::from_str(&read_file(&base.join(path))?)?),
        Some(v) => Ok(serde_json::from_value(v.clone())?),
        None => Err(LabError::MissingParameter(key.to_string())),
    }
}

fn model_params(p: &Params, l: f64) -> Result<ModelParams> {
    Ok(ModelParams::new(
        get_f64(p, "lambda", Some(1.0))?,
        get_f64(p, "Lambda", Some(1.0))?,
        get_f64(p, "delta", Some(0.1))?,
        l,
    )?)
}

fn cl_options(p: &Params, seed: u64) -> Result<ClOptions> {
    Ok(ClOptions {
        restarts: get_usize(p, "restarts", Some(16))?,
        seed,
        window: get_usize(p, "window", Some(2))?,
        ..Default::default()
    })
}

/// Runs `command`; relative file parameters are resolved against `base`.
pub fn execute(command: Command, p: &Params, seed: u64, base: &Path) -> Result<Outcome> {
    match command {
        Command::Energy => energy(p, base),
        Command::MinimizeCl => minimize_cl(p, seed),
        Command::SweepCl => sweep_cl(p, seed).map(|(o, _)| o),
        Command::Density => density(p, base),
        Command::Recovery => recovery(p, seed, base),
        Command::CircleMinimize => circle_minimize(p, seed),
        Command::CircleEnergy => circle_energy(p, base),
        Command::CircleGradcheck => circle_gradcheck(p, seed),
        Command::CircleLambdaLimit => circle_lambda_limit(p, base),
    }
}

fn energy(p: &Params, base: &Path) -> Result<Outcome> {
    let config: DislocationConfig = get_document(p, "config", base)?;
    let l = config.params().l;
    let u = displacement_from_config(&config);
    let tol = get_f64(p, "tol", Some(1e-8))?;
    let report = match p.get("method").and_then(Value::as_str).unwrap_or("exact") {
        "exact" => energy_exact(&u)?,
        "quad" => energy_quadrature(&u, tol)?,
        _ => return Err(bad("method", "expected exact or quad")),
    };
    let mut out = Outcome::default()
        .metric("energy", report.value)
        .metric("energy_per_length", report.value / l)
        .metric("abs_error_estimate", report.abs_error_estimate)
        .metric("N", config.len() as f64);
    if let Some(oracle_tol) = p.get("oracle_tol") {
        let oracle_tol = oracle_tol
            .as_f64()
            .ok_or_else(|| bad("oracle_tol", "expected a number"))?;
        let exact = energy_exact(&u)?.value;
        let quad = energy_quadrature(&u, oracle_tol)?.value;
        out = out.metric("oracle_deviation", (quad - exact).abs());
    }
    out.payload = serde_json::to_value(report)?;
    Ok(out)
}

fn minimize_cl(p: &Params, seed: u64) -> Result<Outcome> {
    let params = model_params(p, get_f64(p, "l", None)?)?;
    let est = estimate_cl(&params, &cl_options(p, seed)?)?;
    Ok(Outcome::default()
        .metric("l", est.l)
        .metric("c_l", est.c_l)
        .metric("N_star", est.n_star as f64)
        .metric("solver_tol", est.solver_tol)
        .metric("n_star_lambda", params.predicted_density())
        .metric("n_star_Lambda", params.alternative_density())
        .with_payload(serde_json::to_value(&est)?))
}

impl Outcome {
    fn with_payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }
}

pub struct SweepRow {
    pub l: f64,
    pub n_star: usize,
    pub c_l: f64,
    pub runtime: f64,
}

/// Estimates at every length of `l_list`; also returns wall-clock rows for the CSV view.
pub fn sweep_cl(p: &Params, seed: u64) -> Result<(Outcome, Vec<SweepRow>)> {
    let ls = get_list(p, "l_list")?;
    let opts = cl_options(p, seed)?;
    let mut rows = Vec::with_capacity(ls.len());
    let mut estimates = Vec::with_capacity(ls.len());
    for &l in &ls {
        let t = Instant::now();
        let est = estimate_cl(&model_params(p, l)?, &opts)?;
        rows.push(SweepRow {
            l,
            n_star: est.n_star,
            c_l: est.c_l,
            runtime: t.elapsed().as_secs_f64(),
        });
        estimates.push(est);
    }
    let steps: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[1].c_l - w[0].c_l).abs() / w[0].c_l)
        .collect();
    let mut out = Outcome::default()
        .column("l", rows.iter().map(|r| r.l).collect())
        .column("N_star", rows.iter().map(|r| r.n_star as f64).collect())
        .column("c_l", rows.iter().map(|r| r.c_l).collect())
        .metric(
            "min_c_l",
            rows.iter().map(|r| r.c_l).fold(f64::INFINITY, f64::min),
        )
        .metric(
            "steps_decreasing",
            f64::from(u8::from(steps.windows(2).all(|s| s[1] < s[0]))),
        );
    if let Some(last) = steps.last() {
        out = out.metric("last_relative_step", *last);
    }
    out.payload = serde_json::to_value(&estimates)?;
    Ok((out, rows))
}

fn density(p: &Params, base: &Path) -> Result<Outcome> {
    let est: ClEstimate = get_document(p, "from", base)?;
    let bins = get_usize(p, "bins", Some(8))?;
    let config = est.config()?;
    let hist = match p.get("window") {
        Some(_) => {
            let w = get_list(p, "window")?;
            if w.len() != 2 {
                return Err(bad("window", "expected [a, b]"));
            }
            dislocation_density_in(&config, bins, w[0], w[1])?
        }
        None => dislocation_density(&config, bins)?,
    };
    let centers: Vec<f64> = hist
        .bin_edges
        .windows(2)
        .map(|e| 0.5 * (e[0] + e[1]))
        .collect();
    let n_lambda = est.params.predicted_density();
    let worst = hist
        .normalized_density
        .iter()
        .fold(0.0f64, |m, &d| m.max((d - n_lambda).abs() / n_lambda));
    Ok(Outcome::default()
        .column("bin_center", centers)
        .column("density", hist.normalized_density.clone())
        .column("count", hist.counts.iter().map(|&c| c as f64).collect())
        .metric("n_star_lambda", n_lambda)
        .metric("n_star_Lambda", est.params.alternative_density())
        .metric("max_relative_deviation", worst)
        .with_payload(serde_json::to_value(&hist)?))
}

fn recovery(p: &Params, seed: u64, base: &Path) -> Result<Outcome> {
    let w: PiecewiseAffine = get_document(p, "w", base)?;
    let l = get_f64(p, "l", None)?;
    let params = model_params(p, l)?;
    let opts = RecoveryOptions {
        gap_constant: p.get("gap_constant").and_then(Value::as_f64),
    };
    let rec = build_recovery_sequence(&w, l, &params, &cl_options(p, seed)?, &opts)?;
    Ok(Outcome::default()
        .metric("l", l)
        .metric("F", rec.rescaled_energy)
        .metric("c_l", rec.c_l)
        .metric("target", rec.target)
        .metric("relative_gap", rec.relative_gap())
        .metric("plugged", rec.plugged.len() as f64)
        .metric("max_spacing_error", rec.max_spacing_error)
        .metric("max_hole", rec.max_hole)
        .with_payload(serde_json::to_value(&rec)?))
}

fn circle_minimize(p: &Params, seed: u64) -> Result<Outcome> {
    let n = get_usize(p, "n", None)?;
    let rho = get_f64(p, "rho", Some(0.5 / n.max(1) as f64))?;
    let restarts = get_usize(p, "restarts", Some(1))?.max(1);
    let opts = CircleOptions::default();
    let mut best: Option<CircleResult> = None;
    let mut seeds = Vec::with_capacity(restarts);
    let mut gaps = Vec::with_capacity(restarts);
    for k in 0..restarts as u64 {
        let run_seed = seed.wrapping_add(k);
        let r = minimize_circle::<f64>(n, rho, run_seed, &opts)?;
        seeds.push(run_seed as f64);
        gaps.push(r.max_gap_error);
        if best
            .as_ref()
            .map_or(true, |b| r.energy_tilde < b.energy_tilde)
        {
            best = Some(r);
        }
    }
    let best = best.expect("at least one run");
    let max_gap_error = gaps.iter().fold(0.0f64, |m, &g| m.max(g));
    let expected = circle::evenly_spaced_energy::<f64>(n);
    Ok(Outcome::default()
        .metric("energy_tilde", best.energy_tilde)
        .metric("max_gap_error", max_gap_error)
        .metric(
            "energy_relative_error",
            (best.energy_tilde - expected).abs() / expected.abs().max(f64::MIN_POSITIVE),
        )
        .column("seed", seeds)
        .column("max_gap_error", gaps)
        .with_payload(json!({
            "points": best.config.points(),
            "energy_tilde": best.energy_tilde,
            "max_gap_error": max_gap_error,
        })))
}

fn circle_config(p: &Params, base: &Path) -> Result<CircleConfig> {
    let points: Vec<f64> = get_document(p, "points", base)?;
    let n = points.len().max(1);
    let rho = get_f64(p, "rho", Some(0.5 / n as f64))?;
    Ok(CircleConfig::new(
        points,
        rho,
        get_f64(p, "lambda", Some(1.0))?,
    )?)
}

fn circle_energy(p: &Params, base: &Path) -> Result<Outcome> {
    let x = circle_config(p, base)?;
    let which = p.get("which").and_then(Value::as_str).unwrap_or("both");
    let mut out = Outcome::default();
    let mut payload = Map::new();
    if matches!(which, "tilde" | "both") {
        let e = energy_tilde(&x)?;
        out = out.metric("energy_tilde", e);
        payload.insert("energy_tilde".into(), json!(e));
    }
    if matches!(which, "erho" | "both") {
        let e = energy_erho(&x)?;
        out = out.metric("energy_erho", e);
        payload.insert("energy_erho".into(), json!(e));
    }
    if !matches!(which, "tilde" | "erho" | "both") {
        return Err(bad("which", "expected tilde, erho or both"));
    }
    out.payload = Value::Object(payload);
    Ok(out)
}

fn circle_gradcheck(p: &Params, seed: u64) -> Result<Outcome> {
    let max_n = get_usize(p, "n", Some(8))?.max(2);
    let trials = get_usize(p, "trials", Some(100))?;
    let h = get_f64(p, "step", Some(1e-6))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ns = Vec::with_capacity(trials);
    let mut errors = Vec::with_capacity(trials);
    for t in 0..trials {
        let n = 2 + t % (max_n - 1);
        let x = random_circle_config(&mut rng, n, 0.2 / n as f64, 1.0)?;
        let g = gradient_tilde(&x)?;
        let pts = x.points();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let mut plus = pts.to_vec();
            let mut minus = pts.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (energy_tilde_points(&plus)? - energy_tilde_points(&minus)?) / (2.0 * h);
            num += (g[i] - fd) * (g[i] - fd);
            den += g[i] * g[i];
        }
        ns.push(n as f64);
        errors.push((num / den).sqrt());
    }
    let worst = errors.iter().fold(0.0f64, |m, &e| m.max(e));
    Ok(Outcome::default()
        .metric("max_relative_error", worst)
        .column("trial", (0..trials).map(|t| t as f64).collect())
        .column("n", ns)
        .column("relative_error", errors))
}

fn circle_lambda_limit(p: &Params, base: &Path) -> Result<Outcome> {
    let x = circle_config(p, base)?;
    let lambdas = get_list(p, "lambdas")?;
    let rows = lambda_limit_convergence(&x, &lambdas)?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let decreasing = gaps.windows(2).all(|g| g[1] < g[0]);
    Ok(Outcome::default()
        .metric("energy_erho", energy_erho(&x)?)
        .metric("last_gap", gaps.last().copied().unwrap_or(f64::NAN))
        .metric("gaps_decreasing", f64::from(u8::from(decreasing)))
        .column("Lambda", rows.iter().map(|r| r.big_lambda).collect())
        .column("delta", rows.iter().map(|r| r.delta).collect())
        .column("energy", rows.iter().map(|r| r.energy).collect())
        .column("gap", gaps)
        .with_payload(serde_json::to_value(&rows)?))
}
