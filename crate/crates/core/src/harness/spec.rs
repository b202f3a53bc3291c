//! Experiment specifications and their resolution into a concrete plan:
//! query points, `(n, k)` settings and every constant the runs depend on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{admissible_k_window, uniform_error_bound, uniform_radius_bound, BoundInputs, KWindow};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::geometry::{unit_ball_volume, NormKind};
use crate::measure::modulus_of_continuity;
use crate::synthetic::{GroundTruth, ModelId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RadiusConcentration,
    Clt,
    CiCoverage,
    RateSweep,
    NwContrast,
    BoundValidity,
    BiasBound,
}

/// How `k` is chosen for each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    /// `k = ceil(n^a)`.
    Power(f64),
    /// The minimizer of the uniform error bound over the admissible window.
    TheoremWindow,
}

impl KRule {
    /// `None` when the rule cannot produce a `k` (empty admissible window).
    fn resolve(&self, n: usize, inputs: &BoundInputs) -> Result<Option<usize>> {
        match *self {
            KRule::Fixed(k) => Ok(Some(k)),
            KRule::Power(a) => Ok(Some(ceil_power(n, a))),
            KRule::TheoremWindow => {
                if !inputs.lipschitz.is_finite() {
                    return Err(Error::spec(
                        "theorem_window needs a finite Lipschitz constant; set bound.lipschitz",
                    ));
                }
                let w = admissible_k_window(&BoundInputs { n, ..*inputs });
                let lo = w.k_min.ceil().max(1.0);
                let hi = w.k_max.floor().min(n as f64);
                if lo > hi {
                    return Ok(None);
                }
                let best = (lo as usize..=hi as usize)
                    .map(|k| (k, uniform_error_bound(&BoundInputs { n, k, ..*inputs }).value))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k);
                Ok(best)
            }
        }
    }
}

/// `ceil(n^a)`, ignoring float noise of relative size 1e-9 so that exact
/// powers such as `(10^5)^0.6 = 1000` are not rounded up.
pub fn ceil_power(n: usize, a: f64) -> usize {
    let x = (n as f64).powf(a);
    (x - 1e-9 * x).ceil().max(1.0) as usize
}

fn default_dimension() -> usize {
    1
}

fn default_delta() -> f64 {
    0.05
}

fn default_level() -> f64 {
    0.95
}

fn default_functionals() -> Vec<Functional> {
    vec![Functional::Identity]
}

fn default_eta() -> Vec<f64> {
    vec![0.1]
}

fn default_v() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

/// Constants of the uniform error bound not implied by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSettings {
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "one")]
    pub a: f64,
    /// The universal constant.
    #[serde(default = "one")]
    pub k_const: f64,
    /// Overrides the largest analytic conditional variance over the
    /// functionals and points.
    #[serde(default)]
    pub sigma2: Option<f64>,
    /// Overrides the largest registered Lipschitz constant.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            v: default_v(),
            a: 1.0,
            k_const: 1.0,
            sigma2: None,
            lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub model: ModelId,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub norm: NormKind,
    pub n_grid: Vec<usize>,
    /// Exactly one of `k_rule` and `k_grid` must be set; `k_grid` crosses
    /// every `n` with a fixed list of `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_rule: Option<KRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    pub replications: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Query points; empty means the lattice over the support.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default = "default_functionals")]
    pub functionals: Vec<Functional>,
    #[serde(default)]
    pub seed: u64,
    /// Lattice points per axis; defaults to `floor((101^min(d,2))^(1/d))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_per_axis: Option<usize>,
    /// Shrink the lattice inward by the largest uniform radius bound.
    #[serde(default)]
    pub interior_only: bool,
    #[serde(default)]
    pub bound: BoundSettings,
    /// Radius inflations for the bias check.
    #[serde(default = "default_eta")]
    pub eta: Vec<f64>,
    /// Output directory; not echoed into results.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::spec(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::spec("replications must be >= 1"));
        }
        if self.dimension == 0 {
            return Err(Error::spec("dimension must be >= 1"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::spec("n_grid must be non-empty and positive"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::spec("n_grid must be strictly increasing"));
        }
        match (&self.k_rule, &self.k_grid) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::spec("set exactly one of k_rule and k_grid"))
            }
            (Some(KRule::Power(a)), _) if !(*a > 0.0 && *a <= 1.0) => {
                return Err(Error::spec(format!("power exponent {a} not in (0, 1]")))
            }
            (None, Some(ks)) if ks.is_empty() => return Err(Error::spec("k_grid is empty")),
            _ => {}
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::spec("delta must lie in (0, 1)"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::spec("level must lie in (0, 1)"));
        }
        if self.functionals.is_empty() {
            return Err(Error::spec("functionals must be non-empty"));
        }
        if let Some(g) = self.functionals.iter().find(|g| g.min_response_dim() > 1) {
            return Err(Error::spec(format!("functional {g} needs vector responses")));
        }
        if self.points.iter().any(|p| p.len() != self.dimension) {
            return Err(Error::spec("every point must have the spec's dimension"));
        }
        if self.eta.is_empty() || self.eta.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::spec("eta must be a non-empty list of positive values"));
        }
        if self.grid_per_axis == Some(0) {
            return Err(Error::spec("grid_per_axis must be positive"));
        }
        if self.kind == ExperimentKind::NwContrast && self.points.len() != 2 {
            return Err(Error::spec("nw_contrast needs exactly two points"));
        }
        let b = &self.bound;
        if !(b.v > 0.0) || !(b.a >= 1.0) || !(b.k_const > 0.0) {
            return Err(Error::spec("bound needs v > 0, a >= 1 and k_const > 0"));
        }
        if b.sigma2.is_some_and(|s| !(s >= 0.0)) || b.lipschitz.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::spec("bound overrides must be >= 0"));
        }
        Ok(())
    }

    /// `floor((101^min(d,2))^(1/d))`.
    pub fn default_grid_per_axis(d: usize) -> usize {
        let total = 101f64.powi(d.min(2) as i32);
        (total.powf(1.0 / d as f64) + 1e-9).floor() as usize
    }
}

/// One `(n, k)` combination with the bound constants it implies.
#[derive(Debug, Clone, Serialize)]
pub struct Setting {
    pub n: usize,
    pub k: usize,
    pub bound_inputs: BoundInputs,
    pub window: KWindow,
    pub radius_bound: f64,
    /// Nadaraya-Watson bandwidth, for `nw_contrast`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Set when the setting was not run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// A validated spec with everything derived from it.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    #[serde(skip)]
    pub spec: ExperimentSpec,
    pub truth: GroundTruth,
    pub ball_volume: f64,
    pub points: Vec<Vec<f64>>,
    pub densities: Vec<f64>,
    pub sigma2: f64,
    /// `None` when some functional has no global Lipschitz constant.
    pub lipschitz: Option<f64>,
    pub settings: Vec<Setting>,
    /// `nw_contrast`: indices of the low- and high-density points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low_high: Option<(usize, usize)>,
    /// `bias_bound`: modulus of continuity indexed by setting, point,
    /// functional and eta.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<Vec<Vec<Vec<f64>>>>,
    pub warnings: Vec<String>,
}

/// Lattice points per axis used to approximate the modulus of continuity.
const MODULUS_GRID: usize = 2001;

impl Plan {
    pub fn new(spec: &ExperimentSpec) -> Result<Plan> {
        spec.validate()?;
        let d = spec.dimension;
        let truth = GroundTruth::new(spec.model, d, spec.norm)?;
        let ball_volume = unit_ball_volume(truth.norm()).volume;
        let consts = truth.constants;
        let mut warnings = Vec::new();

        let lipschitz = match spec.bound.lipschitz {
            Some(l) => Some(l),
            None => spec
                .functionals
                .iter()
                .map(|g| truth.lipschitz(g))
                .try_fold(0.0f64, |acc, l| l.map(|l| acc.max(l))),
        };
        let base = BoundInputs {
            d,
            n: 1,
            k: 1,
            delta: spec.delta,
            v: spec.bound.v,
            a: spec.bound.a,
            sigma2: 0.0,
            lipschitz: lipschitz.unwrap_or(f64::NAN),
            b_x: consts.b_x,
            u_x: consts.u_x,
            c: consts.c,
            t: consts.t,
            ball_volume,
            k_const: spec.bound.k_const,
            f_x: consts.b_x,
        };

        // Points are needed for sigma2, which the theorem-window rule needs,
        // while an interior lattice needs the settings' radius bounds. Use
        // the full lattice for sigma2 in that case; it is a supremum anyway.
        let per_axis = spec
            .grid_per_axis
            .unwrap_or_else(|| ExperimentSpec::default_grid_per_axis(d));
        let support = truth.support();
        let full_grid = lattice(&support, per_axis, 0.0)?;
        let explicit = !spec.points.is_empty();
        if explicit {
            for p in &spec.points {
                let inside = p.iter().zip(&support).all(|(v, (lo, hi))| v >= lo && v <= hi);
                if !inside {
                    return Err(Error::spec(format!("point {p:?} lies outside the support")));
                }
            }
        }
        let sigma_points = if explicit { &spec.points } else { &full_grid };
        let sigma2 = match spec.bound.sigma2 {
            Some(s) => s,
            None => {
                let mut s: f64 = 0.0;
                for g in &spec.functionals {
                    for p in sigma_points {
                        s = s.max(truth.conditional_cov(p, g, g).map_err(spec_error)?);
                    }
                }
                s
            }
        };
        let base = BoundInputs { sigma2, ..base };

        let mut settings = Vec::new();
        for &n in &spec.n_grid {
            let ks: Vec<Option<usize>> = match (&spec.k_rule, &spec.k_grid) {
                (Some(rule), _) => vec![rule.resolve(n, &base)?],
                (None, Some(ks)) => ks.iter().map(|&k| Some(k)).collect(),
                (None, None) => unreachable!("validated"),
            };
            for k in ks {
                let (k, skipped) = match k {
                    Some(k) if k >= 1 && k <= n => (k, None),
                    Some(k) => return Err(Error::spec(format!("k = {k} outside [1, {n}]"))),
                    None => (1, Some("empty admissible window".to_string())),
                };
                let inputs = BoundInputs { n, k, ..base };
                let window = admissible_k_window(&inputs);
                let mut skipped = skipped;
                if spec.kind == ExperimentKind::BoundValidity && skipped.is_none() && window.is_empty() {
                    skipped = Some("empty admissible window".into());
                }
                if let Some(why) = &skipped {
                    warnings.push(format!("n = {n}: {why}; setting skipped"));
                } else if spec.kind == ExperimentKind::BoundValidity && !window.contains(k) {
                    warnings.push(format!("n = {n}, k = {k}: k outside the admissible window"));
                } else if spec.kind == ExperimentKind::RadiusConcentration && !window.radius_contains(k) {
                    warnings.push(format!("n = {n}, k = {k}: outside the radius-bound regime"));
                }
                settings.push(Setting {
                    n,
                    k,
                    bound_inputs: inputs,
                    window,
                    radius_bound: uniform_radius_bound(&inputs),
                    bandwidth: None,
                    skipped,
                });
            }
        }

        let points = if explicit {
            spec.points.clone()
        } else if spec.interior_only {
            let shrink = settings
                .iter()
                .filter(|s| s.skipped.is_none())
                .map(|s| s.radius_bound)
                .fold(0.0, f64::max);
            lattice(&support, per_axis, shrink)?
        } else {
            full_grid
        };
        let densities: Vec<f64> = points.iter().map(|p| truth.density(p)).collect();

        if matches!(spec.kind, ExperimentKind::BoundValidity) && lipschitz.is_none() {
            return Err(Error::spec(
                "bound_validity needs a finite Lipschitz constant; set bound.lipschitz",
            ));
        }
        if spec.kind == ExperimentKind::Clt {
            for g in &spec.functionals {
                for p in &points {
                    if truth.conditional_cov(p, g, g).map_err(spec_error)? == 0.0 {
                        return Err(Error::DegenerateFunctional(format!(
                            "cov_x({g}, {g}) = 0 at {p:?}"
                        )));
                    }
                }
            }
        }
        if spec.kind != ExperimentKind::RadiusConcentration {
            for g in &spec.functionals {
                truth.conditional_mean(&points[0], g).map_err(spec_error)?;
            }
        }

        let mut low_high = None;
        if spec.kind == ExperimentKind::NwContrast {
            let (lo, hi) = if densities[1] >= densities[0] { (0, 1) } else { (1, 0) };
            low_high = Some((lo, hi));
            for s in &mut settings {
                let inputs = BoundInputs {
                    f_x: densities[hi],
                    ..s.bound_inputs
                };
                s.bandwidth = Some(crate::bounds::deterministic_radius(&inputs));
            }
        }

        let mut omega = Vec::new();
        if spec.kind == ExperimentKind::BiasBound {
            for s in &settings {
                let mut per_point = Vec::with_capacity(points.len());
                for (p, f) in points.iter().zip(&densities) {
                    let mut per_g = Vec::with_capacity(spec.functionals.len());
                    for g in &spec.functionals {
                        let mut per_eta = Vec::with_capacity(spec.eta.len());
                        for eta in &spec.eta {
                            let r = ((1.0 + eta) * s.k as f64 / (s.n as f64 * ball_volume * f))
                                .powf(1.0 / d as f64);
                            let grid = MODULUS_GRID.pow(d.min(2) as u32).min(1_000_000);
                            per_eta.push(modulus_of_continuity(&truth, g, p, r, grid)?);
                        }
                        per_g.push(per_eta);
                    }
                    per_point.push(per_g);
                }
                omega.push(per_point);
            }
        }

        Ok(Plan {
            spec: spec.clone(),
            truth,
            ball_volume,
            points,
            densities,
            sigma2,
            lipschitz,
            settings,
            low_high,
            omega,
            warnings,
        })
    }

    /// Deterministic radius `(k / (n f(x) V_d))^(1/d)` at point `p`.
    pub fn deterministic_radius(&self, setting: &Setting, p: usize) -> f64 {
        crate::bounds::deterministic_radius(&BoundInputs {
            f_x: self.densities[p],
            ..setting.bound_inputs
        })
    }
}

fn spec_error(e: Error) -> Error {
    match e {
        Error::Unsupported(m) => Error::spec(m),
        other => other,
    }
}

/// Product lattice with `per_axis` points per axis over the box, each
/// interval shrunk by `shrink` at both ends.
fn lattice(support: &[(f64, f64)], per_axis: usize, shrink: f64) -> Result<Vec<Vec<f64>>> {
    let d = support.len();
    let axes: Vec<Vec<f64>> = support
        .iter()
        .map(|&(lo, hi)| {
            let (lo, hi) = (lo + shrink, hi - shrink);
            if lo > hi {
                return Err(Error::spec(format!(
                    "interior lattice is empty: shrink {shrink} exceeds half the support width"
                )));
            }
            Ok(if per_axis == 1 {
                vec![(lo + hi) / 2.0]
            } else {
                (0..per_axis)
                    .map(|i| {
                        if i == per_axis - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
                        }
                    })
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let total = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for mut i in 0..total {
        let mut p = Vec::with_capacity(d);
        for axis in &axes {
            p.push(axis[i % per_axis]);
            i /= per_axis;
        }
        out.push(p);
    }
    Ok(out)
}
