//! Per-replication runners and the aggregation of their records.

use crate::bounds::{uniform_error_bound, BoundInputs};
use crate::error::{Error, Result};
use crate::estimators::ci_from_measure;
use crate::measure::{knn_measure, nw_measure, LocalMeasure, SampleSet};
use crate::special::ks_distance_to_normal;
use crate::synthetic::RngSpec;

use super::records::{Aggregate, Record, RecordIndex};
use super::spec::{ExperimentKind, Plan, Setting};
use super::stats::{correlation, mean, median, ols_slope, variance};

/// Analytic `mu_x(g)` and `cov_x(g, g)` per point and functional.
pub(crate) struct Targets {
    pub ids: Vec<String>,
    pub mu: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl Targets {
    pub fn new(plan: &Plan) -> Result<Self> {
        let fs = &plan.spec.functionals;
        let ids = fs.iter().map(|g| g.id()).collect();
        if plan.spec.kind == ExperimentKind::RadiusConcentration {
            return Ok(Targets { ids, mu: Vec::new(), var: Vec::new() });
        }
        let mut mu = Vec::with_capacity(plan.points.len());
        let mut var = Vec::with_capacity(plan.points.len());
        for p in &plan.points {
            mu.push(fs.iter().map(|g| plan.truth.conditional_mean(p, g)).collect::<Result<_>>()?);
            var.push(fs.iter().map(|g| plan.truth.conditional_cov(p, g, g)).collect::<Result<_>>()?);
        }
        Ok(Targets { ids, mu, var })
    }
}

pub(crate) fn bias_metric(eta: f64) -> String {
    format!("bias_violation@{eta}")
}

/// Sample for replication `r` at size `n`. Different `n` use independent
/// streams; settings sharing `n` share the sample.
pub fn replication_sample(plan: &Plan, r: usize, n: usize) -> Result<SampleSet> {
    let rng = RngSpec::new(plan.spec.seed, r as u64).derive(n as u64);
    plan.truth.draw_sample(n, rng)
}

pub(crate) fn replicate(plan: &Plan, t: &Targets, r: usize) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut current: Option<(usize, SampleSet)> = None;
    for s in plan.settings.iter().filter(|s| s.skipped.is_none()) {
        if current.as_ref().map(|c| c.0) != Some(s.n) {
            current = Some((s.n, replication_sample(plan, r, s.n)?));
        }
        let sample = &current.as_ref().expect("sample drawn").1;
        match plan.spec.kind {
            ExperimentKind::RadiusConcentration => radius_records(plan, s, sample, r, &mut out)?,
            ExperimentKind::Clt | ExperimentKind::CiCoverage => clt_records(plan, t, s, sample, r, &mut out)?,
            ExperimentKind::RateSweep | ExperimentKind::BoundValidity => {
                sup_error_records(plan, t, s, sample, r, &mut out)?
            }
            ExperimentKind::NwContrast => nw_records(plan, t, s, sample, r, &mut out)?,
            ExperimentKind::BiasBound => bias_records(plan, t, s, sample, r, &mut out)?,
        }
    }
    Ok(out)
}

fn radius_records(plan: &Plan, s: &Setting, sample: &SampleSet, r: usize, out: &mut Vec<Record>) -> Result<()> {
    let d = plan.truth.dim() as i32;
    let norm = sample.norm();
    let mut worst: f64 = 0.0;
    for (p, x) in plan.points.iter().enumerate() {
        let q = sample.covariates().knn_radius(x, s.k, norm)?;
        let ratio = (q.radius / plan.deterministic_radius(s, p)).powi(d);
        out.push(Record::new(r, s.n, s.k, Some(p), None, "radius_ratio", ratio));
        worst = worst.max(q.radius / s.radius_bound);
    }
    out.push(Record::new(r, s.n, s.k, None, None, "max_radius_over_bound", worst));
    Ok(())
}

fn clt_records(
    plan: &Plan,
    t: &Targets,
    s: &Setting,
    sample: &SampleSet,
    r: usize,
    out: &mut Vec<Record>,
) -> Result<()> {
    let sqrt_k = (s.k as f64).sqrt();
    for (p, x) in plan.points.iter().enumerate() {
        let m = knn_measure(sample, x, s.k)?;
        for (j, g) in plan.spec.functionals.iter().enumerate() {
            let id = Some(t.ids[j].as_str());
            let ci = ci_from_measure(&m, g, plan.spec.level)?;
            let mu = t.mu[p][j];
            out.push(Record::new(r, s.n, s.k, Some(p), id, "estimate", ci.center));
            if t.var[p][j] > 0.0 {
                let z = sqrt_k * (ci.center - mu) / t.var[p][j].sqrt();
                out.push(Record::new(r, s.n, s.k, Some(p), id, "z", z));
            }
            let covered = if ci.contains(mu) { 1.0 } else { 0.0 };
            out.push(Record::new(r, s.n, s.k, Some(p), id, "covered", covered));
            out.push(Record::new(r, s.n, s.k, Some(p), id, "half_width", ci.half_width));
        }
    }
    Ok(())
}

fn sup_error_records(
    plan: &Plan,
    t: &Targets,
    s: &Setting,
    sample: &SampleSet,
    r: usize,
    out: &mut Vec<Record>,
) -> Result<()> {
    let mut sup: f64 = 0.0;
    for (p, x) in plan.points.iter().enumerate() {
        let m = knn_measure(sample, x, s.k)?;
        for (j, g) in plan.spec.functionals.iter().enumerate() {
            sup = sup.max((m.integrate(g)? - t.mu[p][j]).abs());
        }
    }
    out.push(Record::new(r, s.n, s.k, None, None, "sup_error", sup));
    Ok(())
}

fn nw_records(
    plan: &Plan,
    t: &Targets,
    s: &Setting,
    sample: &SampleSet,
    r: usize,
    out: &mut Vec<Record>,
) -> Result<()> {
    let bandwidth = s.bandwidth.expect("nw_contrast plans carry a bandwidth");
    let sqrt_k = (s.k as f64).sqrt();
    let nw_scale = (s.n as f64 * bandwidth.powi(plan.truth.dim() as i32)).sqrt();
    for (p, x) in plan.points.iter().enumerate() {
        let knn = knn_measure(sample, x, s.k)?;
        let nw = match nw_measure(sample, x, bandwidth) {
            Ok(m) => Some(m),
            Err(Error::EmptyBall { .. }) => None,
            Err(e) => return Err(e),
        };
        let empty = if nw.is_none() { 1.0 } else { 0.0 };
        out.push(Record::new(r, s.n, s.k, Some(p), None, "nw_empty", empty));
        for (j, g) in plan.spec.functionals.iter().enumerate() {
            let id = Some(t.ids[j].as_str());
            let mu = t.mu[p][j];
            out.push(Record::new(r, s.n, s.k, Some(p), id, "knn_z", sqrt_k * (knn.integrate(g)? - mu)));
            if let Some(nw) = &nw {
                out.push(Record::new(r, s.n, s.k, Some(p), id, "nw_z", nw_scale * (nw.integrate(g)? - mu)));
            }
        }
    }
    Ok(())
}

fn bias_records(
    plan: &Plan,
    t: &Targets,
    s: &Setting,
    sample: &SampleSet,
    r: usize,
    out: &mut Vec<Record>,
) -> Result<()> {
    let si = plan
        .settings
        .iter()
        .position(|o| std::ptr::eq(o, s))
        .expect("setting belongs to plan");
    for (p, x) in plan.points.iter().enumerate() {
        let m = knn_measure(sample, x, s.k)?;
        for (j, g) in plan.spec.functionals.iter().enumerate() {
            let id = Some(t.ids[j].as_str());
            // Exact bias term sum_i w_i (mu_{X_i}(g) - mu_x(g)).
            let mut sum = 0.0;
            for &i in m.support() {
                sum += plan.truth.conditional_mean(sample.covariates().point(i), g)? - t.mu[p][j];
            }
            let bias = sum / m.denominator();
            out.push(Record::new(r, s.n, s.k, Some(p), id, "bias", bias));
            for (e, &eta) in plan.spec.eta.iter().enumerate() {
                let violated = if bias.abs() > plan.omega[si][p][j][e] { 1.0 } else { 0.0 };
                out.push(Record::new(r, s.n, s.k, Some(p), id, &bias_metric(eta), violated));
            }
        }
    }
    Ok(())
}

fn frequency(flags: &[f64]) -> f64 {
    mean(flags)
}

/// Uniform error bound of a setting with the universal constant replaced.
pub fn bound_at(s: &Setting, k_const: f64) -> f64 {
    uniform_error_bound(&BoundInputs { k_const, ..s.bound_inputs }).value
}

/// Aggregates as a pure function of the plan and the records.
pub fn aggregate(plan: &Plan, records: &[Record]) -> Result<Vec<Aggregate>> {
    let idx = RecordIndex::new(records);
    let t = Targets::new(plan)?;
    let kind = plan.spec.kind;
    let mut out = Vec::new();
    let mut sweep: Vec<(usize, usize, f64)> = Vec::new();

    for s in plan.settings.iter().filter(|s| s.skipped.is_none()) {
        let (n, k) = (s.n, s.k);
        let at = |name: &str, v: f64| Aggregate::new(name, v).setting(n, k);
        match kind {
            ExperimentKind::RadiusConcentration => {
                let mut pooled = Vec::new();
                for p in 0..plan.points.len() {
                    let v = idx.get(n, k, Some(p), None, "radius_ratio");
                    out.push(at("median_radius_ratio", median(v)).point(p));
                    pooled.extend_from_slice(v);
                }
                out.push(at("median_radius_ratio", median(&pooled)));
                out.push(at("mean_radius_ratio", mean(&pooled)));
                let worst = idx.get(n, k, None, None, "max_radius_over_bound");
                let flags: Vec<f64> = worst.iter().map(|&w| if w > 1.0 { 1.0 } else { 0.0 }).collect();
                out.push(at("radius_bound_violation_frequency", frequency(&flags)));
                out.push(at("mean_max_radius_over_bound", mean(worst)));
            }
            ExperimentKind::Clt | ExperimentKind::CiCoverage => {
                for p in 0..plan.points.len() {
                    for id in &t.ids {
                        let g = Some(id.as_str());
                        let z = idx.get(n, k, Some(p), g, "z");
                        if !z.is_empty() {
                            out.push(at("ks_distance", ks_distance_to_normal(z)).point(p).functional(id));
                            out.push(at("z_mean", mean(z)).point(p).functional(id));
                            out.push(at("z_variance", variance(z)).point(p).functional(id));
                        }
                        let cov = frequency(idx.get(n, k, Some(p), g, "covered"));
                        out.push(at("coverage", cov).point(p).functional(id));
                        let hw = mean(idx.get(n, k, Some(p), g, "half_width"));
                        out.push(at("mean_half_width", hw).point(p).functional(id));
                    }
                    for a in 0..t.ids.len() {
                        for b in a + 1..t.ids.len() {
                            let za = idx.get(n, k, Some(p), Some(&t.ids[a]), "z");
                            let zb = idx.get(n, k, Some(p), Some(&t.ids[b]), "z");
                            if za.is_empty() || zb.is_empty() {
                                continue;
                            }
                            let pair = format!("{}&{}", t.ids[a], t.ids[b]);
                            let fs = &plan.spec.functionals;
                            let target = plan.truth.conditional_cov(&plan.points[p], &fs[a], &fs[b])?
                                / (t.var[p][a] * t.var[p][b]).sqrt();
                            out.push(at("z_correlation", correlation(za, zb)).point(p).functional(&pair));
                            out.push(at("z_correlation_target", target).point(p).functional(&pair));
                        }
                    }
                }
            }
            ExperimentKind::RateSweep | ExperimentKind::BoundValidity => {
                let sup = idx.get(n, k, None, None, "sup_error");
                let m = mean(sup);
                out.push(at("mean_sup_error", m));
                if kind == ExperimentKind::BoundValidity {
                    let bound = bound_at(s, plan.spec.bound.k_const);
                    let flags: Vec<f64> = sup.iter().map(|&e| if e > bound { 1.0 } else { 0.0 }).collect();
                    out.push(at("bound", bound));
                    out.push(at("violation_frequency", frequency(&flags)));
                    out.push(at("in_window", if s.window.contains(k) { 1.0 } else { 0.0 }));
                }
                sweep.push((n, k, m));
            }
            ExperimentKind::NwContrast => {
                let (lo, hi) = plan.low_high.expect("nw_contrast plans carry low/high points");
                for p in 0..plan.points.len() {
                    let empty: f64 = idx.get(n, k, Some(p), None, "nw_empty").iter().sum();
                    out.push(at("nw_empty_count", empty).point(p));
                }
                for id in &t.ids {
                    let g = Some(id.as_str());
                    let var = |p: usize, metric: &str| variance(idx.get(n, k, Some(p), g, metric));
                    for p in 0..plan.points.len() {
                        out.push(at("knn_variance", var(p, "knn_z")).point(p).functional(id));
                        out.push(at("nw_variance", var(p, "nw_z")).point(p).functional(id));
                    }
                    out.push(at("knn_variance_ratio", var(lo, "knn_z") / var(hi, "knn_z")).functional(id));
                    out.push(at("nw_variance_ratio", var(lo, "nw_z") / var(hi, "nw_z")).functional(id));
                }
                out.push(at("nw_variance_ratio_target", plan.densities[hi] / plan.densities[lo]));
            }
            ExperimentKind::BiasBound => {
                for id in &t.ids {
                    let g = Some(id.as_str());
                    let mut max_bias: f64 = 0.0;
                    for p in 0..plan.points.len() {
                        for b in idx.get(n, k, Some(p), g, "bias") {
                            max_bias = max_bias.max(b.abs());
                        }
                    }
                    out.push(at("max_abs_bias", max_bias).functional(id));
                    for &eta in &plan.spec.eta {
                        let metric = bias_metric(eta);
                        let mut flags = Vec::new();
                        for p in 0..plan.points.len() {
                            flags.extend_from_slice(idx.get(n, k, Some(p), g, &metric));
                        }
                        out.push(at("bias_violation_frequency", frequency(&flags)).functional(id).param(eta));
                    }
                }
            }
        }
    }

    if !sweep.is_empty() {
        out.extend(sweep_slopes(&sweep, plan.spec.k_grid.is_some()));
    }
    Ok(out)
}

fn log_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    ols_slope(&xs, &ys)
}

/// Log-log slopes of the mean sup-error against `n` (and against `k` for
/// `k_grid` sweeps), plus the slope over the largest decade of `n`.
fn sweep_slopes(sweep: &[(usize, usize, f64)], k_grid: bool) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let vs_n = |pts: Vec<(f64, f64)>, key: Option<usize>, out: &mut Vec<Aggregate>| {
        if pts.len() < 2 {
            return;
        }
        let tag = |a: Aggregate| match key {
            Some(k) => Aggregate { k: Some(k), ..a },
            None => a,
        };
        let (s, se) = log_slope(&pts);
        out.push(tag(Aggregate::new("slope_vs_n", s)));
        out.push(tag(Aggregate::new("slope_vs_n_se", se)));
        let n_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
        let tail: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 >= n_max / 10.0).collect();
        if tail.len() >= 2 {
            out.push(tag(Aggregate::new("tail_slope_vs_n", log_slope(&tail).0)));
        }
    };
    if !k_grid {
        vs_n(sweep.iter().map(|&(n, _, e)| (n as f64, e)).collect(), None, &mut out);
        return out;
    }
    let mut ks: Vec<usize> = sweep.iter().map(|s| s.1).collect();
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        let pts = sweep.iter().filter(|s| s.1 == k).map(|&(n, _, e)| (n as f64, e)).collect();
        vs_n(pts, Some(k), &mut out);
    }
    let mut ns: Vec<usize> = sweep.iter().map(|s| s.0).collect();
    ns.dedup();
    for &n in &ns {
        let pts: Vec<(f64, f64)> = sweep.iter().filter(|s| s.0 == n).map(|&(_, k, e)| (k as f64, e)).collect();
        if pts.len() >= 2 {
            let (s, se) = log_slope(&pts);
            out.push(Aggregate { n: Some(n), ..Aggregate::new("slope_vs_k", s) });
            out.push(Aggregate { n: Some(n), ..Aggregate::new("slope_vs_k_se", se) });
        }
    }
    out
}
