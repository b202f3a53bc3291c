//! Monte Carlo experiments over the synthetic models.
//!
//! A run resolves an [`ExperimentSpec`] into a [`Plan`], executes the
//! replications in parallel (each on its own RNG stream, merged in
//! replication order) and summarizes the per-replication records into
//! aggregates. Outputs are `result.json` (config echo, constants, aggregates)
//! and `reps.csv` (records); both are byte-identical for a given spec and
//! seed whatever the worker count.

mod experiments;
mod records;
mod spec;
pub mod stats;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use experiments::{aggregate, bound_at, replication_sample};
pub use records::{compare_aggregates, read_records, write_records, Aggregate, Record};
pub use spec::{ceil_power, BoundSettings, ExperimentKind, ExperimentSpec, KRule, Plan, Setting};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance for recomputed aggregates on load.
pub const AGGREGATE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub plan: Plan,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Serialize)]
struct ResultOut<'a> {
    schema_version: u32,
    config: &'a ExperimentSpec,
    constants: &'a Plan,
    aggregates: &'a [Aggregate],
    warnings: &'a [String],
}

#[derive(Deserialize)]
struct ResultIn {
    schema_version: u32,
    config: ExperimentSpec,
    aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn spec(&self) -> &ExperimentSpec {
        &self.plan.spec
    }

    pub fn warnings(&self) -> &[String] {
        &self.plan.warnings
    }

    /// Aggregates with the given name, in output order.
    pub fn find<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Aggregate> + 'a {
        self.aggregates.iter().filter(move |a| a.name == name)
    }

    /// The first aggregate with this name and no point attached.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.find(name).find(|a| a.point.is_none()).map(|a| a.value)
    }

    pub fn result_json(&self) -> Result<String> {
        let out = ResultOut {
            schema_version: SCHEMA_VERSION,
            config: &self.plan.spec,
            constants: &self.plan,
            aggregates: &self.aggregates,
            warnings: &self.plan.warnings,
        };
        let mut s = serde_json::to_string_pretty(&out)?;
        s.push('\n');
        Ok(s)
    }

    pub fn reps_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_records(&self.records, &mut buf)?;
        Ok(buf)
    }

    /// Writes `result.json` and `reps.csv` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("result.json"), self.result_json()?)?;
        fs::write(dir.join("reps.csv"), self.reps_csv()?)?;
        Ok(())
    }
}

/// Runs every replication of `spec` on `workers` threads (0 = all cores).
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentResult> {
    let plan = Plan::new(spec)?;
    let targets = experiments::Targets::new(&plan)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<Record>> = pool.install(|| {
        (0..spec.replications)
            .into_par_iter()
            .map(|r| experiments::replicate(&plan, &targets, r))
            .collect::<Result<_>>()
    })?;
    let records: Vec<Record> = per_rep.into_iter().flatten().collect();
    let aggregates = aggregate(&plan, &records)?;
    Ok(ExperimentResult { plan, records, aggregates })
}

/// Reads a result directory and checks that the stored aggregates are
/// reproduced from `reps.csv` within [`AGGREGATE_TOLERANCE`].
pub fn load_result(dir: &Path) -> Result<ExperimentResult> {
    let stored: ResultIn = serde_json::from_str(&fs::read_to_string(dir.join("result.json"))?)?;
    if stored.schema_version != SCHEMA_VERSION {
        return Err(Error::Verification(format!(
            "result schema version {} (expected {SCHEMA_VERSION})",
            stored.schema_version
        )));
    }
    let plan = Plan::new(&stored.config)?;
    let records = read_records(fs::File::open(dir.join("reps.csv"))?)?;
    let aggregates = aggregate(&plan, &records)?;
    compare_aggregates(&stored.aggregates, &aggregates, AGGREGATE_TOLERANCE)?;
    Ok(ExperimentResult { plan, records, aggregates })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    /// Smallest grid value of the universal constant that keeps every
    /// setting's violation frequency at or below `delta`.
    pub constant: f64,
    /// Largest per-setting violation frequency at that constant.
    pub violation_frequency: f64,
}

/// Grid `1, 1.5, 2, ...` searched by [`calibrate_constant`].
pub const CALIBRATION_STEP: f64 = 0.5;
pub const CALIBRATION_MAX: f64 = 1000.0;

/// Worst per-setting frequency of `sup_error > bound(k_const)`.
pub fn violation_frequency(result: &ExperimentResult, k_const: f64) -> Result<f64> {
    let plan = &result.plan;
    if plan.spec.kind != ExperimentKind::BoundValidity {
        return Err(Error::invalid("violation frequencies need a bound_validity result"));
    }
    let mut worst: f64 = 0.0;
    for s in plan.settings.iter().filter(|s| s.skipped.is_none()) {
        let bound = bound_at(s, k_const);
        let (mut hit, mut total) = (0usize, 0usize);
        for r in &result.records {
            if r.n == s.n && r.k == s.k && r.metric == "sup_error" {
                total += 1;
                hit += usize::from(r.value > bound);
            }
        }
        if total > 0 {
            worst = worst.max(hit as f64 / total as f64);
        }
    }
    Ok(worst)
}

/// Smallest universal constant on the grid `1, 1.5, 2, ...` for which the
/// violation frequency is at most `delta` in every setting of `result`.
pub fn calibrate_constant(result: &ExperimentResult) -> Result<Calibration> {
    let delta = result.plan.spec.delta;
    if result.plan.settings.iter().all(|s| s.skipped.is_some()) {
        return Err(Error::Verification("every setting was skipped".into()));
    }
    let mut k = 1.0;
    while k <= CALIBRATION_MAX {
        let f = violation_frequency(result, k)?;
        if f <= delta {
            return Ok(Calibration {
                constant: k,
                violation_frequency: f,
            });
        }
        k += CALIBRATION_STEP;
    }
    Err(Error::Verification(format!(
        "no constant up to {CALIBRATION_MAX} keeps violations below {delta}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> ExperimentSpec {
        ExperimentSpec::from_json(json).unwrap()
    }

    #[test]
    fn small_runs_of_every_kind_load_back() {
        let specs = [
            r#"{"kind":"radius_concentration","model":"M1","n_grid":[500],"k_rule":{"power":0.7},"replications":4,"grid_per_axis":11}"#,
            r#"{"kind":"clt","model":"M1","n_grid":[500],"k_rule":{"power":0.6},"replications":8,"points":[[0.5]],"functionals":["identity","cdf:0"]}"#,
            r#"{"kind":"ci_coverage","model":"M3","n_grid":[500],"k_rule":{"fixed":40},"replications":4,"points":[[0.3]],"functionals":["identity","const:2"]}"#,
            r#"{"kind":"rate_sweep","model":"M1","n_grid":[256,512,1024],"k_rule":{"power":0.6666666666666666},"replications":3,"grid_per_axis":11}"#,
            r#"{"kind":"nw_contrast","model":"M2","n_grid":[2000],"k_rule":{"fixed":50},"replications":6,"points":[[0.25],[0.75]]}"#,
            r#"{"kind":"bound_validity","model":"M0","n_grid":[20000],"k_grid":[500,1000],"replications":3,"grid_per_axis":5,"functionals":["cdf:0"]}"#,
            r#"{"kind":"bias_bound","model":"M1","dimension":2,"n_grid":[1000],"k_rule":{"fixed":20},"replications":2,"grid_per_axis":3,"interior_only":true,"eta":[0.1,0.5]}"#,
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in specs.iter().enumerate() {
            let res = run_experiment(&spec(s), 1).unwrap();
            assert!(!res.records.is_empty(), "{s}");
            let sub = dir.path().join(i.to_string());
            res.write(&sub).unwrap();
            let back = load_result(&sub).unwrap();
            assert_eq!(back.records, res.records);
            assert_eq!(back.result_json().unwrap(), res.result_json().unwrap());
        }
    }

    #[test]
    fn tampered_reps_fail_verification() {
        let s = spec(r#"{"kind":"rate_sweep","model":"M1","n_grid":[200,400],"k_rule":{"fixed":10},"replications":3,"grid_per_axis":5}"#);
        let res = run_experiment(&s, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path()).unwrap();
        let path = dir.path().join("reps.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let last = lines.last_mut().unwrap();
        let cut = last.rfind(',').unwrap();
        last.truncate(cut);
        last.push_str(",123.0");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(load_result(dir.path()), Err(Error::Verification(_))));
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let s = spec(r#"{"kind":"clt","model":"M1","n_grid":[300,600],"k_rule":{"power":0.6},"replications":12,"points":[[0.2],[0.7]],"functionals":["identity","square"]}"#);
        let a = run_experiment(&s, 1).unwrap();
        let b = run_experiment(&s, 3).unwrap();
        assert_eq!(a.result_json().unwrap(), b.result_json().unwrap());
        assert_eq!(a.reps_csv().unwrap(), b.reps_csv().unwrap());
    }

    #[test]
    fn constant_functional_is_always_covered() {
        let s = spec(r#"{"kind":"ci_coverage","model":"M1","n_grid":[1000],"k_rule":{"fixed":37},"replications":20,"points":[[0.1],[0.6]],"functionals":["const:0.1"]}"#);
        let res = run_experiment(&s, 1).unwrap();
        let cov: Vec<f64> = res.find("coverage").map(|a| a.value).collect();
        assert_eq!(cov, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_mean_model_has_no_bias() {
        let s = spec(r#"{"kind":"bias_bound","model":"M0","n_grid":[2000],"k_rule":{"fixed":30},"replications":3,"grid_per_axis":7,"functionals":["identity","cdf:0.3"]}"#);
        let res = run_experiment(&s, 1).unwrap();
        assert!(res.records.iter().filter(|r| r.metric == "bias").all(|r| r.value == 0.0));
        assert!(res.find("bias_violation_frequency").all(|a| a.value == 0.0));
    }

    #[test]
    fn bias_violations_shrink_as_eta_grows() {
        let s = spec(r#"{"kind":"bias_bound","model":"M1","n_grid":[5000],"k_rule":{"power":0.6},"replications":10,"grid_per_axis":21,"interior_only":true,"eta":[0.05,0.1,0.5]}"#);
        let res = run_experiment(&s, 1).unwrap();
        let f: Vec<f64> = res.find("bias_violation_frequency").map(|a| a.value).collect();
        assert_eq!(f.len(), 3);
        assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
    }

    #[test]
    fn calibration_is_monotone_and_minimal() {
        let s = spec(r#"{"kind":"bound_validity","model":"M1","n_grid":[10000],"k_rule":{"fixed":1000},"replications":5,"grid_per_axis":11,"functionals":["cdf:0"],"bound":{"sigma2":0.0,"lipschitz":0.0,"v":0.01}}"#);
        let res = run_experiment(&s, 1).unwrap();
        let cal = calibrate_constant(&res).unwrap();
        assert!(cal.violation_frequency <= 0.05);
        if cal.constant > 1.0 {
            assert!(violation_frequency(&res, cal.constant - CALIBRATION_STEP).unwrap() > 0.05);
        }
        let mut prev = 1.0;
        for k in [1.0, 2.0, 4.0, 8.0] {
            let f = violation_frequency(&res, k).unwrap();
            assert!(f <= prev);
            prev = f;
        }
    }
}
