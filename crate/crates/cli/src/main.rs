use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use knnm_core::bounds::{
    admissible_k_window, chernoff_lower, chernoff_upper, deterministic_radius, uniform_ball_bound,
    uniform_error_bound, uniform_radius_bound, vc_concentration_bound, BoundInputs,
};
use knnm_core::estimators::{ci_from_measure, local_linear_fit};
use knnm_core::geometry::unit_ball_volume;
use knnm_core::harness::{calibrate_constant, run_experiment, violation_frequency, ExperimentKind, ExperimentSpec};
use knnm_core::measure::{knn_measure, SampleSet};
use knnm_core::{Error, Functional, Norm, NormKind, Result};
use serde_json::{json, Value};

/// k-nearest-neighbor empirical measures: estimation, bounds and Monte Carlo
/// experiments.
#[derive(Parser)]
#[command(name = "knnm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a conditional functional at a query point from a CSV sample.
    Estimate(EstimateArgs),
    /// Run an experiment spec and write result.json and reps.csv.
    Experiment(ExperimentArgs),
    /// Evaluate a bound formula.
    Bounds {
        #[command(subcommand)]
        formula: Formula,
    },
    /// Calibrate the universal constant of the uniform error bound.
    CalibrateKConstant(CalibrateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with columns x_1..x_d and y.
    #[arg(long)]
    data: PathBuf,
    /// Query point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    x: Vec<f64>,
    #[arg(long)]
    k: usize,
    /// mean, cdf:t, quantile:u or loclin.
    #[arg(long, default_value = "mean")]
    functional: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Known residual variance for the local-linear covariance.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value = "euclidean")]
    norm: NormKind,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides the spec's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    /// A bound_validity spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also report the violation frequency on a run with this seed.
    #[arg(long)]
    holdout_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    v: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0.25)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 1.0)]
    b_x: f64,
    #[arg(long, default_value_t = 1.0)]
    u_x: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Unit-ball volume; defaults to that of --norm in dimension --d.
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long, default_value = "euclidean")]
    norm: NormKind,
    /// Universal constant.
    #[arg(long, default_value_t = 1.0)]
    k_const: f64,
    /// Density at the query point.
    #[arg(long, default_value_t = 1.0)]
    f_x: f64,
}

impl BoundArgs {
    fn inputs(&self) -> Result<BoundInputs> {
        let ball_volume = match self.volume {
            Some(v) => v,
            None => unit_ball_volume(Norm::new(self.norm, self.d)?).volume,
        };
        let inputs = BoundInputs {
            d: self.d,
            n: self.n,
            k: self.k,
            delta: self.delta,
            v: self.v,
            a: self.a,
            sigma2: self.sigma2,
            lipschitz: self.lipschitz,
            b_x: self.b_x,
            u_x: self.u_x,
            c: self.c,
            t: self.t,
            ball_volume,
            k_const: self.k_const,
            f_x: self.f_x,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

#[derive(Subcommand)]
enum Formula {
    /// Population k-NN radius at a point with density --f-x.
    Radius(BoundArgs),
    /// Uniform high-probability cap on k-NN radii.
    RadiusBound(BoundArgs),
    /// Admissible range of k.
    Window(BoundArgs),
    /// Uniform error bound of the k-NN measure.
    ErrorBound(BoundArgs),
    /// Binomial lower and upper brackets.
    Chernoff {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Uniform lower bound on empirical ball masses.
    Ball {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        delta: f64,
    },
    /// Concentration bound for a VC class.
    Vc {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        v: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        k_prime: f64,
    },
}

fn estimate(args: &EstimateArgs) -> Result<Value> {
    let sample = SampleSet::read_csv(File::open(&args.data)?)?.with_norm(args.norm);
    if args.x.len() != sample.dim() {
        return Err(Error::InvalidArgument(format!(
            "query point has {} coordinates, data has {}",
            args.x.len(),
            sample.dim()
        )));
    }
    let m = knn_measure(&sample, &args.x, args.k)?;
    let base = json!({ "x": args.x, "k": args.k, "radius": m.radius(), "tie_count": m.query.tie_count });
    let mut out = match args.functional.as_str() {
        "loclin" => {
            let fit = local_linear_fit(&sample, &args.x, args.k, args.sigma2.unwrap_or(0.0))?;
            json!({
                "functional": "loclin",
                "alpha": fit.alpha,
                "beta": fit.beta,
                "rank": fit.rank,
                "rank_deficient": fit.rank_deficient,
                "gram_pinv": matrix_rows(fit.gram_pinv.nrows(), |i, j| fit.gram_pinv[(i, j)]),
                "variance": args.sigma2.map(|s| matrix_rows(fit.gram_pinv.nrows(), |i, j| s * fit.gram_pinv[(i, j)])),
            })
        }
        q if q.starts_with("quantile:") => {
            let u: f64 = q["quantile:".len()..]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad quantile level in `{q}`")))?;
            json!({ "functional": q, "estimate": m.conditional_quantile(u)? })
        }
        other => {
            let g: Functional = other.parse()?;
            let ci = ci_from_measure(&m, &g, args.level)?;
            json!({
                "functional": g.id(),
                "estimate": ci.center,
                "ci": {
                    "lower": ci.lower(),
                    "upper": ci.upper(),
                    "half_width": ci.half_width,
                    "level": ci.level,
                    "variance": ci.variance,
                    "variance_clamped": ci.variance_clamped,
                },
            })
        }
    };
    merge(&mut out, base);
    Ok(out)
}

fn matrix_rows(n: usize, at: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| at(i, j)).collect()).collect()
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        for (k, v) in b {
            a.entry(k).or_insert(v);
        }
    }
}

fn load_spec(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidSpec(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = ExperimentSpec::from_json(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn experiment(args: &ExperimentArgs) -> Result<Value> {
    let spec = load_spec(&args.spec, args.seed)?;
    let out = args
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .ok_or_else(|| Error::InvalidSpec("no output directory: pass --out or set `output`".into()))?;
    let result = run_experiment(&spec, args.workers)?;
    result.write(&out)?;
    for w in result.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(json!({
        "output": out,
        "records": result.records.len(),
        "aggregates": result.aggregates.len(),
        "warnings": result.warnings(),
    }))
}

fn calibrate(args: &CalibrateArgs) -> Result<Value> {
    let spec = load_spec(&args.spec, args.seed)?;
    if spec.kind != ExperimentKind::BoundValidity {
        return Err(Error::InvalidSpec("calibration needs a bound_validity spec".into()));
    }
    let result = run_experiment(&spec, args.workers)?;
    let cal = calibrate_constant(&result)?;
    let mut out = json!({
        "constant": cal.constant,
        "violation_frequency": cal.violation_frequency,
        "delta": spec.delta,
        "seed": spec.seed,
    });
    if let Some(seed) = args.holdout_seed {
        let held = run_experiment(&ExperimentSpec { seed, ..spec.clone() }, args.workers)?;
        merge(
            &mut out,
            json!({ "holdout_seed": seed, "holdout_violation_frequency": violation_frequency(&held, cal.constant)? }),
        );
    }
    Ok(out)
}

fn bounds(formula: &Formula) -> Result<Value> {
    Ok(match formula {
        Formula::Radius(a) => json!({ "radius": deterministic_radius(&a.inputs()?) }),
        Formula::RadiusBound(a) => json!({ "radius_bound": uniform_radius_bound(&a.inputs()?) }),
        Formula::Window(a) => {
            let w = admissible_k_window(&a.inputs()?);
            json!({ "window": w, "empty": w.is_empty(), "contains_k": w.contains(a.k) })
        }
        Formula::ErrorBound(a) => json!(uniform_error_bound(&a.inputs()?)),
        Formula::Chernoff { mu, delta } => {
            check_probability(*delta)?;
            json!({ "lower": chernoff_lower(*mu, *delta), "upper": chernoff_upper(*mu, *delta) })
        }
        Formula::Ball { p, n, d, delta } => {
            check_probability(*delta)?;
            json!({ "lower_bound": uniform_ball_bound(*p, *n, *d, *delta) })
        }
        Formula::Vc { n, v, a, u, sigma, delta, k_prime } => {
            check_probability(*delta)?;
            json!({ "bound": vc_concentration_bound(*n, *v, *a, *u, *sigma, *delta, *k_prime)? })
        }
    })
}

fn check_probability(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta {delta} not in (0, 1)")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => experiment(a),
        Command::Bounds { formula } => bounds(formula),
        Command::CalibrateKConstant(a) => calibrate(a),
    };
    match result {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("JSON values serialize");
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
