//! Monte Carlo estimators built on the flow and geometry modules.
//!
//! Replica `i` of every estimator draws from `replica_rng(seed, i)` and
//! replicas are aggregated in index order, so results do not depend on the
//! number of worker threads.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flow::{
    hits_as_large_set, run_until_hit, simulate_paths, step_count, uniform_save_times, CurveImage,
    CurveTracker, Ensemble, Flow, DEFAULT_PRE_REFINE,
};
use crate::geometry::{self, build_lip_net, hausdorff_estimate, LipNet};
use crate::model::rotation;
use crate::rng::replica_rng;
use crate::{Mat2, Vec2};

/// Sample mean with its standard error and a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateResult {
    pub value: f64,
    pub std_error: f64,
    pub n_replicas: usize,
    pub ci95: (f64, f64),
}

impl EstimateResult {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(invalid(
                "n_replicas",
                format!("standard error needs at least 2 samples, got {n}"),
            ));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self::new(mean, (var / n as f64).sqrt(), n))
    }

    pub fn new(value: f64, std_error: f64, n_replicas: usize) -> Self {
        Self {
            value,
            std_error,
            n_replicas,
            ci95: (value - 1.96 * std_error, value + 1.96 * std_error),
        }
    }

    /// `|a − b| / sqrt(se_a² + se_b²)`.
    pub fn z_distance(&self, other: &EstimateResult) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        if se == 0.0 {
            if self.value == other.value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - other.value).abs() / se
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `E|φ_T(0)|² / (2T)`, which is 1 for a normalised model.
pub fn one_point_diffusivity(
    flow: &Flow,
    horizon: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<EstimateResult> {
    if n < 2 {
        return Err(invalid("N", "need at least 2 replicas"));
    }
    let n_steps = step_count(horizon, dt);
    let h = horizon / n_steps as f64;
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let mut ens = Ensemble::new(vec![Vec2::zeros()]).expect("one point");
            for _ in 0..n_steps {
                ens.step(flow, h, &mut rng);
            }
            ens.positions[0].norm_squared() / (2.0 * horizon)
        })
        .collect();
    EstimateResult::from_samples(&samples)
}

/// Per-replica Lyapunov bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReplica {
    pub mu1: f64,
    pub mu2: f64,
    /// Accumulated `log|det J|` divided by the horizon.
    pub log_det_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub mu1: EstimateResult,
    pub mu2: EstimateResult,
    pub horizon: f64,
    pub dt: f64,
    pub replicas: Vec<LyapunovReplica>,
}

/// Gram–Schmidt QR of a 2×2 matrix: returns `(Q, |R₁₁|, |R₂₂|)`.
fn qr2(j: &Mat2) -> (Mat2, f64, f64) {
    let a = j.column(0).into_owned();
    let b = j.column(1).into_owned();
    let r11 = a.norm();
    let q1 = a / r11;
    let r12 = q1.dot(&b);
    let w = b - q1 * r12;
    let r22 = w.norm();
    let q2 = w / r22;
    (Mat2::from_columns(&[q1, q2]), r11, r22)
}

/// Largest Jacobian norm tolerated between renormalisations.
const JACOBIAN_OVERFLOW: f64 = 1e150;

/// Lyapunov exponents from Jacobians along single trajectories, with QR
/// renormalisation every `renorm_every` steps.
pub fn estimate_lyapunov(
    flow: &Flow,
    horizon: f64,
    dt: f64,
    n: usize,
    renorm_every: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if n < 2 {
        return Err(invalid("N", "need at least 2 replicas"));
    }
    if renorm_every == 0 {
        return Err(invalid("renorm_every", "must be >= 1"));
    }
    let n_steps = step_count(horizon, dt);
    let h = horizon / n_steps as f64;
    let replicas: Vec<Result<LyapunovReplica>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let mut ens = Ensemble::with_jacobians(vec![Vec2::zeros()])?;
            let (mut log1, mut log2, mut log_det) = (0.0, 0.0, 0.0);
            for s in 1..=n_steps {
                let noise = flow.draw(&mut rng);
                let field = flow.field(&noise, h);
                let (_, grad) = field.displacement_and_gradient(ens.positions[0]);
                log_det += (Mat2::identity() + grad).determinant().abs().ln();
                ens.apply(&field, h);
                if s % renorm_every == 0 || s == n_steps {
                    let jac = &mut ens.jacobians.as_mut().expect("tracked")[0];
                    if !(jac.abs().max() < JACOBIAN_OVERFLOW) {
                        return Err(Error::Numerical(format!(
                            "Jacobian overflow at step {s}; use a smaller renorm_every"
                        )));
                    }
                    let (q, r11, r22) = qr2(jac);
                    log1 += r11.ln();
                    log2 += r22.ln();
                    *jac = q;
                }
            }
            Ok(LyapunovReplica {
                mu1: log1 / horizon,
                mu2: log2 / horizon,
                log_det_rate: log_det / horizon,
            })
        })
        .collect();
    let replicas = replicas.into_iter().collect::<Result<Vec<_>>>()?;
    let mu1: Vec<f64> = replicas.iter().map(|r| r.mu1).collect();
    let mu2: Vec<f64> = replicas.iter().map(|r| r.mu2).collect();
    Ok(LyapunovEstimate {
        mu1: EstimateResult::from_samples(&mu1)?,
        mu2: EstimateResult::from_samples(&mu2)?,
        horizon,
        dt,
        replicas,
    })
}

/// Curve tracking parameters shared by the set-valued experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveParams {
    pub dt: f64,
    /// Refinement threshold applied after every step.
    pub h_max: f64,
    pub vertex_cap: usize,
}

/// Hitting-time parameters for stable-norm runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingParams {
    pub curve: CurveParams,
    /// Radius of the target ball (`R ≥ 1`).
    pub radius: f64,
    /// Timeout is `t_max_factor · |v| / k_rough`.
    pub t_max_factor: f64,
    pub k_rough: f64,
}

/// Timeout fraction above which a distance estimate is flagged.
pub const MAX_TIMEOUT_FRACTION: f64 = 0.2;

/// Outcome of one censored hitting run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HitOutcome {
    Hit { tau: f64, max_vertices: usize },
    Timeout,
    /// Vertex cap exceeded before a hit.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub distance: f64,
    /// `τ/|v|` over completed runs.
    pub tau_over_dist: EstimateResult,
    pub n_runs: usize,
    pub timeouts: usize,
    pub unresolved: usize,
    pub censored_fraction: f64,
    pub unreliable: bool,
    pub outcomes: Vec<HitOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableNormEstimate {
    pub direction: (f64, f64),
    pub distances: Vec<DistanceEstimate>,
    pub extrapolated_norm: f64,
    pub k_hat: f64,
    /// Relative standard error of `k_hat` (delta method).
    pub k_hat_rel_se: f64,
    pub unreliable: bool,
}

/// Unit segment `{u·d : u ∈ [0, 1]}` pointing along `direction`.
pub fn initial_segment(direction: Vec2, h_max: f64) -> Result<CurveImage> {
    let d = direction.normalize();
    CurveImage::segment(Vec2::zeros(), d, DEFAULT_PRE_REFINE, h_max)
}

/// Censored hitting runs towards `distance · direction` from the unit
/// segment along `direction`; replica `i` uses stream `i`.
pub fn hitting_runs(
    flow: &Flow,
    direction: Vec2,
    distance: f64,
    params: &HittingParams,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<HitOutcome>> {
    let dir = direction.normalize();
    let curve = initial_segment(dir, params.curve.h_max)?;
    let target = dir * distance;
    let t_max = params.t_max_factor * distance / params.k_rough;
    (0..n_rep)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            match run_until_hit(
                &curve,
                flow,
                target,
                params.radius,
                params.curve.dt,
                t_max,
                params.curve.vertex_cap,
                &mut rng,
            ) {
                Ok(h) if h.hit => Ok(HitOutcome::Hit {
                    tau: h.tau,
                    max_vertices: h.report.max_vertices,
                }),
                Ok(_) => Ok(HitOutcome::Timeout),
                Err(Error::Resolution { .. }) => Ok(HitOutcome::Unresolved),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn summarize_distance(distance: f64, outcomes: Vec<HitOutcome>) -> Result<DistanceEstimate> {
    let ratios: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            HitOutcome::Hit { tau, .. } => Some(tau / distance),
            _ => None,
        })
        .collect();
    let timeouts = outcomes
        .iter()
        .filter(|o| matches!(o, HitOutcome::Timeout))
        .count();
    let unresolved = outcomes
        .iter()
        .filter(|o| matches!(o, HitOutcome::Unresolved))
        .count();
    let censored_fraction = (timeouts + unresolved) as f64 / outcomes.len() as f64;
    let tau_over_dist = EstimateResult::from_samples(&ratios).map_err(|_| {
        Error::Numerical(format!(
            "fewer than 2 completed hitting runs at distance {distance}"
        ))
    })?;
    Ok(DistanceEstimate {
        distance,
        tau_over_dist,
        n_runs: outcomes.len(),
        timeouts,
        unresolved,
        censored_fraction,
        unreliable: censored_fraction > MAX_TIMEOUT_FRACTION,
        outcomes,
    })
}

/// Mean `τ/|v|` per distance; the value at the largest distance is taken as
/// the stable norm `‖direction‖` and `K̂ = 1/‖·‖`.
pub fn estimate_stable_norm(
    flow: &Flow,
    direction: Vec2,
    distances: &[f64],
    params: &HittingParams,
    n_rep: usize,
    seed: u64,
) -> Result<StableNormEstimate> {
    if distances.is_empty() {
        return Err(invalid("distances", "need at least one distance"));
    }
    if distances.iter().any(|&d| d < 10.0) || distances.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("distances", "must be increasing and >= 10"));
    }
    if params.radius < 1.0 {
        return Err(invalid("R", "must be >= 1"));
    }
    if !(params.k_rough > 0.0 && params.t_max_factor > 0.0) {
        return Err(invalid("t_max_factor", "timeout scale must be positive"));
    }
    if !(direction.norm() > 0.0) {
        return Err(invalid("direction", "must be nonzero"));
    }
    let mut per_distance = Vec::with_capacity(distances.len());
    for (j, &d) in distances.iter().enumerate() {
        let outcomes = hitting_runs(
            flow,
            direction,
            d,
            params,
            n_rep,
            crate::rng::splitmix64(seed ^ (j as u64 + 1)),
        )?;
        per_distance.push(summarize_distance(d, outcomes)?);
    }
    let last = per_distance.last().expect("nonempty").tau_over_dist;
    let extrapolated_norm = last.value;
    if !(extrapolated_norm > 0.0) {
        return Err(Error::Numerical("nonpositive stable norm estimate".into()));
    }
    let unreliable = per_distance.iter().any(|d| d.unreliable);
    let dir = direction.normalize();
    Ok(StableNormEstimate {
        direction: (dir.x, dir.y),
        distances: per_distance,
        extrapolated_norm,
        k_hat: 1.0 / extrapolated_norm,
        k_hat_rel_se: last.std_error / last.value,
        unreliable,
    })
}

/// Rough linear speed from a small pilot with a generous timeout, used to
/// scale the timeouts of the main runs.
pub fn pilot_speed(
    flow: &Flow,
    distance: f64,
    params: &HittingParams,
    n_rep: usize,
    seed: u64,
) -> Result<f64> {
    let outcomes = hitting_runs(flow, Vec2::x(), distance, params, n_rep, seed)?;
    let taus: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            HitOutcome::Hit { tau, .. } => Some(*tau),
            _ => None,
        })
        .collect();
    if taus.is_empty() {
        return Err(Error::Numerical("pilot produced no hits".into()));
    }
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    Ok(distance / mean.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub horizon: f64,
    pub eps: f64,
    pub k_hat: f64,
    pub outer: EstimateResult,
    pub inner: EstimateResult,
    pub both: EstimateResult,
    pub unresolved: usize,
}

/// Empirical probability of `(1−ε)T·K̂·B ⊆ swept set ⊆ (1+ε)T·K̂·B`, where
/// the swept set is every tracked vertex at every save step up to `T`, the
/// outer inclusion is checked pointwise and the inner one by requiring each
/// of `n_directions` points on the inner circle to be within `radius` of a
/// swept vertex.
#[allow(clippy::too_many_arguments)]
pub fn shape_experiment(
    flow: &Flow,
    horizon: f64,
    eps: f64,
    n_directions: usize,
    k_hat: f64,
    radius: f64,
    curve: &CurveParams,
    save_every: f64,
    n_rep: usize,
    seed: u64,
) -> Result<ShapeReport> {
    if !(k_hat > 0.0) {
        return Err(invalid("K_hat", "must be positive"));
    }
    if n_directions == 0 {
        return Err(invalid("n_directions", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(invalid("eps", "must lie in [0, 1]"));
    }
    let n_steps = step_count(horizon, curve.dt);
    let h = horizon / n_steps as f64;
    let save_stride = ((save_every / h).round() as usize).max(1);
    let outer_r = (1.0 + eps) * horizon * k_hat;
    let inner_pts: Vec<Vec2> = (0..n_directions)
        .map(|d| {
            let a = 2.0 * PI * d as f64 / n_directions as f64;
            Vec2::new(a.cos(), a.sin()) * ((1.0 - eps) * horizon * k_hat)
        })
        .collect();
    let start = initial_segment(Vec2::x(), curve.h_max)?;
    let runs: Vec<Option<(bool, bool)>> = (0..n_rep)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let mut tracker = CurveTracker::new(start.clone(), curve.vertex_cap);
            let mut nearest = vec![f64::INFINITY; inner_pts.len()];
            let mut max_r: f64 = 0.0;
            let mut record = |verts: &[Vec2]| {
                for v in verts {
                    max_r = max_r.max(v.norm());
                    for (n, p) in nearest.iter_mut().zip(&inner_pts) {
                        *n = n.min((v - p).norm());
                    }
                }
            };
            record(&tracker.curve.vertices);
            if tracker.start().is_err() {
                return None;
            }
            for s in 1..=n_steps {
                if tracker.step(flow, h, &mut rng).is_err() {
                    return None;
                }
                if s % save_stride == 0 || s == n_steps {
                    record(&tracker.curve.vertices);
                }
            }
            let outer = max_r <= outer_r;
            let inner = nearest.iter().all(|&d| d <= radius);
            Some((outer, inner))
        })
        .collect();
    let unresolved = runs.iter().filter(|r| r.is_none()).count();
    let done: Vec<(bool, bool)> = runs.into_iter().flatten().collect();
    let outer: Vec<f64> = done.iter().map(|r| indicator(r.0)).collect();
    let inner: Vec<f64> = done.iter().map(|r| indicator(r.1)).collect();
    let both: Vec<f64> = done.iter().map(|r| indicator(r.0 && r.1)).collect();
    Ok(ShapeReport {
        horizon,
        eps,
        k_hat,
        outer: EstimateResult::from_samples(&outer)?,
        inner: EstimateResult::from_samples(&inner)?,
        both: EstimateResult::from_samples(&both)?,
        unresolved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceResult {
    pub horizon: f64,
    /// Fraction of replicas whose tracked diameter drops below 1 at a save
    /// step in `[√T, T]`.
    pub fraction: EstimateResult,
    pub drops: usize,
    pub unresolved: usize,
}

/// Diameter persistence of a large initial curve.
pub fn diameter_persistence(
    flow: &Flow,
    gamma: &CurveImage,
    horizon: f64,
    curve: &CurveParams,
    save_every: f64,
    n_rep: usize,
    seed: u64,
) -> Result<PersistenceResult> {
    if gamma.diameter() < 1.0 {
        return Err(invalid("gamma", "initial curve must have diameter >= 1"));
    }
    if n_rep < 2 {
        return Err(invalid("n_rep", "need at least 2 replicas"));
    }
    let n_steps = step_count(horizon, curve.dt);
    let h = horizon / n_steps as f64;
    let save_stride = ((save_every / h).round() as usize).max(1);
    let from = horizon.sqrt();
    let mut start = gamma.clone();
    start.h_max = curve.h_max;
    let runs: Vec<Option<bool>> = (0..n_rep)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let mut tracker = CurveTracker::new(start.clone(), curve.vertex_cap);
            tracker.start().ok()?;
            let mut dropped = false;
            for s in 1..=n_steps {
                tracker.step(flow, h, &mut rng).ok()?;
                if (s % save_stride == 0 || s == n_steps)
                    && tracker.time >= from - 1e-9
                    && tracker.curve.diameter() < 1.0
                {
                    dropped = true;
                    break;
                }
            }
            Some(dropped)
        })
        .collect();
    let unresolved = runs.iter().filter(|r| r.is_none()).count();
    let flags: Vec<f64> = runs.iter().flatten().map(|&d| indicator(d)).collect();
    let drops = flags.iter().filter(|&&f| f > 0.0).count();
    Ok(PersistenceResult {
        horizon,
        fraction: EstimateResult::from_samples(&flags)?,
        drops,
        unresolved,
    })
}

/// Net resolution for the support experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetParams {
    pub directions: usize,
    pub levels: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportParams {
    pub horizons: Vec<f64>,
    /// Number of save-grid points `m_t` (including `t = 0`).
    pub grid_points: usize,
    pub net: NetParams,
    pub eps_tol: f64,
    pub poly_verts: usize,
    pub dt: f64,
    pub n_rep: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportRow {
    pub horizon: f64,
    pub replica: usize,
    pub d_upper: f64,
    pub d_lower: f64,
    pub d_h: f64,
    pub k_hat: f64,
}

/// Median and interquartile range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportSummary {
    pub horizon: f64,
    pub d_h: Spread,
    pub d_upper: Spread,
    pub d_lower: Spread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    pub k_hat: f64,
    pub rows: Vec<SupportRow>,
    pub summaries: Vec<SupportSummary>,
    pub net: geometry::NetResolution,
}

impl SupportReport {
    /// Whether the median `d_H` strictly decreases across consecutive horizons.
    pub fn median_strictly_decreasing(&self) -> bool {
        self.summaries
            .windows(2)
            .all(|w| w[1].d_h.median < w[0].d_h.median)
    }
}

/// Distance between time-scaled trajectories of `x_sample` and `Lip(K̂)`
/// for every horizon and replica.
pub fn support_experiment(
    flow: &Flow,
    x_sample: &[Vec2],
    k_hat: f64,
    params: &SupportParams,
    seed: u64,
) -> Result<SupportReport> {
    if x_sample.is_empty() {
        return Err(invalid("X_sample", "need at least one starting point"));
    }
    if params.n_rep == 0 || params.horizons.is_empty() {
        return Err(invalid("n_rep", "need at least one replica and horizon"));
    }
    let net: LipNet = build_lip_net(
        k_hat,
        params.grid_points,
        params.net.directions,
        params.net.levels,
        params.net.cap,
        &mut replica_rng(crate::rng::derive_seed(seed, "lip-net"), 0),
    )?;
    let save_times = uniform_save_times(params.grid_points - 1);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (hi, &horizon) in params.horizons.iter().enumerate() {
        let horizon_seed = crate::rng::splitmix64(seed ^ (hi as u64 + 1));
        let per_rep: Vec<Result<SupportRow>> = (0..params.n_rep)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(horizon_seed, r as u64);
                let dt = params.dt.min(horizon / (params.grid_points - 1) as f64);
                let bundle = simulate_paths(x_sample, flow, horizon, dt, &save_times, &mut rng)?;
                let est = hausdorff_estimate(
                    &bundle.scaled_paths(),
                    k_hat,
                    &net,
                    params.eps_tol,
                    params.poly_verts,
                )?;
                Ok(SupportRow {
                    horizon,
                    replica: r,
                    d_upper: est.d_upper,
                    d_lower: est.d_lower,
                    d_h: est.d_h,
                    k_hat,
                })
            })
            .collect();
        let block = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&SupportRow) -> f64| block.iter().map(f).collect::<Vec<_>>();
        summaries.push(SupportSummary {
            horizon,
            d_h: Spread::of(&col(|r| r.d_h)),
            d_upper: Spread::of(&col(|r| r.d_upper)),
            d_lower: Spread::of(&col(|r| r.d_lower)),
        });
        rows.extend(block);
    }
    Ok(SupportReport {
        k_hat,
        rows,
        summaries,
        net: net.resolution,
    })
}

/// `n` equally spaced points on the unit segment `[0, 1] × {0}`.
pub fn unit_segment_sample(n: usize) -> Vec<Vec2> {
    if n == 1 {
        return vec![Vec2::zeros()];
    }
    (0..n)
        .map(|i| Vec2::new(i as f64 / (n - 1) as f64, 0.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub r: f64,
    pub k_base: f64,
    pub k_scaled: f64,
    /// `K̃ / (r K)`.
    pub ratio: f64,
    pub ratio_se: f64,
    pub mu1_base: f64,
    pub mu1_scaled: f64,
}

/// Compares the linear speed of the model `b̃(x) = b(r x)` with `r·K̂`.
///
/// The scaled runs use distances, initial segment, target radius and
/// refinement threshold multiplied by `1/r` and the step by `1/r²`, which
/// maps the base experiment onto the scaled flow apart from the fixed
/// diameter threshold.
#[cfg(feature = "scaling")]
pub fn scaling_check(
    flow: &Flow,
    r: f64,
    distances: &[f64],
    params: &HittingParams,
    n_rep: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid("r", "must lie in (0, 1]"));
    }
    let scaled_modes = flow.modes().scaled(r);
    let scaled_flow = Flow::new(&scaled_modes);
    let base = estimate_stable_norm(flow, Vec2::x(), distances, params, n_rep, seed)?;
    let scaled_params = HittingParams {
        curve: CurveParams {
            dt: params.curve.dt / (r * r),
            h_max: params.curve.h_max / r,
            vertex_cap: params.curve.vertex_cap,
        },
        radius: params.radius / r,
        t_max_factor: params.t_max_factor,
        k_rough: params.k_rough * r,
    };
    let scaled_distances: Vec<f64> = distances.iter().map(|d| d / r).collect();
    let scaled = scaled_stable_norm(&scaled_flow, r, &scaled_distances, &scaled_params, n_rep, seed)?;
    let ratio = scaled.k_hat / (r * base.k_hat);
    let ratio_se = ratio * base.k_hat_rel_se.hypot(scaled.k_hat_rel_se);
    Ok(ScalingReport {
        r,
        k_base: base.k_hat,
        k_scaled: scaled.k_hat,
        ratio,
        ratio_se,
        mu1_base: flow.modes().moduli().mu1,
        mu1_scaled: scaled_modes.moduli().mu1,
    })
}

#[cfg(feature = "scaling")]
fn scaled_stable_norm(
    flow: &Flow,
    r: f64,
    distances: &[f64],
    params: &HittingParams,
    n_rep: usize,
    seed: u64,
) -> Result<StableNormEstimate> {
    let mut per_distance = Vec::with_capacity(distances.len());
    let t_scale = 1.0 / r;
    for (j, &d) in distances.iter().enumerate() {
        let dir = Vec2::x();
        let curve = CurveImage::segment(
            Vec2::zeros(),
            dir * t_scale,
            DEFAULT_PRE_REFINE * t_scale,
            params.curve.h_max,
        )?;
        let t_max = params.t_max_factor * d / params.k_rough;
        let stream = crate::rng::splitmix64(seed ^ (j as u64 + 1));
        let outcomes: Vec<HitOutcome> = (0..n_rep)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(stream, i as u64);
                match run_until_hit(
                    &curve,
                    flow,
                    dir * d,
                    params.radius,
                    params.curve.dt,
                    t_max,
                    params.curve.vertex_cap,
                    &mut rng,
                ) {
                    Ok(h) if h.hit => Ok(HitOutcome::Hit {
                        tau: h.tau,
                        max_vertices: h.report.max_vertices,
                    }),
                    Ok(_) => Ok(HitOutcome::Timeout),
                    Err(Error::Resolution { .. }) => Ok(HitOutcome::Unresolved),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        per_distance.push(summarize_distance(d, outcomes)?);
    }
    let last = per_distance.last().expect("nonempty").tau_over_dist;
    Ok(StableNormEstimate {
        direction: (1.0, 0.0),
        unreliable: per_distance.iter().any(|d| d.unreliable),
        distances: per_distance,
        extrapolated_norm: last.value,
        k_hat: 1.0 / last.value,
        k_hat_rel_se: last.std_error / last.value,
    })
}

/// Rotate a direction by the model's symmetry angle `2π/L`.
pub fn symmetry_rotation(angular_order: usize) -> Mat2 {
    rotation(2.0 * PI / angular_order as f64)
}

/// Whether the tracked initial segment already satisfies the hit condition.
pub fn hits_immediately(curve: &CurveImage, target: Vec2, radius: f64) -> bool {
    hits_as_large_set(&curve.vertices, target, radius).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpectralModel;

    fn l32() -> Flow {
        Flow::new(&SpectralModel::single(1.0, 32, 1.0).build().unwrap())
    }

    #[test]
    fn estimate_result_interval() {
        let e = EstimateResult::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.value, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.std_error - sd / 2.0).abs() < 1e-15);
        assert_eq!(e.ci95.1 - e.ci95.0, 2.0 * 1.96 * e.std_error);
        assert!(EstimateResult::from_samples(&[1.0]).is_err());
    }

    #[test]
    fn diffusivity_rejects_single_replica() {
        assert!(one_point_diffusivity(&l32(), 1.0, 0.01, 1, 0).is_err());
    }

    #[test]
    fn qr_bookkeeping_identity() {
        let est = estimate_lyapunov(&l32(), 5.0, 0.01, 8, 10, 3).unwrap();
        for r in &est.replicas {
            assert!((r.mu1 + r.mu2 - r.log_det_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn renormalisation_is_pure_bookkeeping() {
        let a = estimate_lyapunov(&l32(), 5.0, 0.01, 6, 10, 9).unwrap();
        let b = estimate_lyapunov(&l32(), 5.0, 0.01, 6, 20, 9).unwrap();
        for (x, y) in a.replicas.iter().zip(&b.replicas) {
            assert!((x.mu1 - y.mu1).abs() < 1e-9);
            assert!((x.mu2 - y.mu2).abs() < 1e-9);
        }
    }

    #[test]
    fn lyapunov_overflow_is_reported() {
        // a single renormalisation at the end of a long, violently stretching run
        let flow = Flow::new(&SpectralModel::single(40.0, 8, 1.0).build().unwrap());
        let err = estimate_lyapunov(&flow, 20.0, 0.01, 2, usize::MAX, 1).unwrap_err();
        assert!(matches!(err, Error::Numerical(msg) if msg.contains("renorm_every")));
    }

    #[test]
    fn persistence_preconditions() {
        let small = CurveImage::segment(Vec2::zeros(), Vec2::new(0.5, 0.0), 0.02, 0.1).unwrap();
        let p = CurveParams {
            dt: 0.01,
            h_max: 0.1,
            vertex_cap: 1000,
        };
        assert!(diameter_persistence(&l32(), &small, 4.0, &p, 1.0, 10, 0).is_err());
        let unit = CurveImage::unit_segment(0.1).unwrap();
        assert!(diameter_persistence(&l32(), &unit, 4.0, &p, 1.0, 0, 0).is_err());
    }

    #[test]
    fn shape_degenerate_eps() {
        let p = CurveParams {
            dt: 0.01,
            h_max: 0.1,
            vertex_cap: 100_000,
        };
        let rep = shape_experiment(&l32(), 2.0, 1.0, 8, 0.5, 1.0, &p, 0.5, 4, 0).unwrap();
        assert_eq!(rep.inner.value, 1.0);
        assert!(rep.outer.value >= rep.both.value);
    }

    #[test]
    fn quantiles() {
        let s = Spread::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.iqr(), 2.0);
    }

    #[test]
    fn support_smoke_single_point() {
        let params = SupportParams {
            horizons: vec![5.0],
            grid_points: 3,
            net: NetParams {
                directions: 4,
                levels: 1,
                cap: 1000,
            },
            eps_tol: 1e-4,
            poly_verts: 64,
            dt: 0.01,
            n_rep: 1,
        };
        let rep = support_experiment(&l32(), &[Vec2::zeros()], 0.5, &params, 1).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let row = rep.rows[0];
        assert!(row.d_h.is_finite() && row.d_upper >= 0.0 && row.d_lower >= 0.0);
        assert_eq!(row.d_h, row.d_upper.max(row.d_lower));
    }
}
