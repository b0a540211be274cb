//! Euler–Maruyama integration of the stochastic flow.
//!
//! One [`NoiseDraw`] is taken per time step and applied to every tracked
//! point; sharing the draw is what couples the points into a flow rather than
//! a collection of independent Brownian motions. For a single point the step
//! is exact in law (Gaussian with covariance `dt·Id`), multi-point and Jacobian
//! dynamics carry the usual `O(dt)` weak error.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::geometry;
use crate::model::ModeSet;
use crate::{Mat2, Vec2};

/// Default integrator step.
pub const DEFAULT_DT: f64 = 0.01;
/// Default pre-refinement spacing of initial curves.
pub const DEFAULT_PRE_REFINE: f64 = 0.02;
/// Default cap on tracked curve vertices.
pub const DEFAULT_VERTEX_CAP: usize = 200_000;

/// Standard normal pair per mode for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub xi: Vec<f64>,
    pub xi_prime: Vec<f64>,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(n_modes: usize, rng: &mut R) -> Self {
        let xi = (0..n_modes).map(|_| rng.sample(StandardNormal)).collect();
        let xi_prime = (0..n_modes).map(|_| rng.sample(StandardNormal)).collect();
        Self { xi, xi_prime }
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self {
            xi: vec![0.0; n_modes],
            xi_prime: vec![0.0; n_modes],
        }
    }
}

/// `√dt · Σ √σ² e (cos⟨k,x⟩ ξ + sin⟨k,x⟩ ξ′)`.
pub fn velocity_increment(m: &ModeSet, x: Vec2, noise: &NoiseDraw, dt: f64) -> Vec2 {
    let sum = m.modes.iter().enumerate().fold(Vec2::zeros(), |acc, (j, md)| {
        let (s, c) = md.k.dot(&x).sin_cos();
        acc + md.e * (md.sigma2.sqrt() * (c * noise.xi[j] + s * noise.xi_prime[j]))
    });
    sum * dt.sqrt()
}

/// Exact spatial gradient of [`velocity_increment`].
pub fn jacobian_increment(m: &ModeSet, x: Vec2, noise: &NoiseDraw, dt: f64) -> Mat2 {
    let sum = m.modes.iter().enumerate().fold(Mat2::zeros(), |acc, (j, md)| {
        let (s, c) = md.k.dot(&x).sin_cos();
        acc + md.e * md.k.transpose()
            * (md.sigma2.sqrt() * (-s * noise.xi[j] + c * noise.xi_prime[j]))
    });
    sum * dt.sqrt()
}

#[derive(Debug, Clone)]
struct WaveGroup {
    k: Vec2,
    /// (mode index, +1 if k_j = k, -1 if k_j = -k)
    members: Vec<(usize, f64)>,
}

/// Mode set compiled for fast stepping.
///
/// Modes whose wavevectors coincide up to sign share one `sin_cos`
/// evaluation per point; per step the noise is folded into one cosine and one
/// sine coefficient vector per group.
#[derive(Debug, Clone)]
pub struct Flow {
    modes: ModeSet,
    groups: Vec<WaveGroup>,
}

/// Noise folded into per-group coefficients for a single step.
#[derive(Debug, Clone)]
pub struct StepField<'a> {
    groups: &'a [WaveGroup],
    cos_coef: Vec<Vec2>,
    sin_coef: Vec<Vec2>,
}

impl Flow {
    pub fn new(modes: &ModeSet) -> Self {
        let key = |v: Vec2| (v.x.to_bits(), v.y.to_bits());
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut groups: Vec<WaveGroup> = Vec::new();
        for (j, md) in modes.modes.iter().enumerate() {
            if let Some(&g) = index.get(&key(md.k)) {
                groups[g].members.push((j, 1.0));
            } else if let Some(&g) = index.get(&key(-md.k)) {
                groups[g].members.push((j, -1.0));
            } else {
                index.insert(key(md.k), groups.len());
                groups.push(WaveGroup {
                    k: md.k,
                    members: vec![(j, 1.0)],
                });
            }
        }
        Self {
            modes: modes.clone(),
            groups,
        }
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        NoiseDraw::sample(self.n_modes(), rng)
    }

    pub fn field(&self, noise: &NoiseDraw, dt: f64) -> StepField<'_> {
        let sq = dt.sqrt();
        let mut cos_coef = Vec::with_capacity(self.groups.len());
        let mut sin_coef = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut p = Vec2::zeros();
            let mut q = Vec2::zeros();
            for &(j, sign) in &g.members {
                let md = &self.modes.modes[j];
                let a = md.e * (md.sigma2.sqrt() * sq);
                p += a * noise.xi[j];
                q += a * (sign * noise.xi_prime[j]);
            }
            cos_coef.push(p);
            sin_coef.push(q);
        }
        StepField {
            groups: &self.groups,
            cos_coef,
            sin_coef,
        }
    }
}

impl StepField<'_> {
    pub fn displacement(&self, x: Vec2) -> Vec2 {
        let mut v = Vec2::zeros();
        for (g, (p, q)) in self.groups.iter().zip(self.cos_coef.iter().zip(&self.sin_coef)) {
            let (s, c) = g.k.dot(&x).sin_cos();
            v += p * c + q * s;
        }
        v
    }

    pub fn displacement_and_gradient(&self, x: Vec2) -> (Vec2, Mat2) {
        let mut v = Vec2::zeros();
        let mut grad = Mat2::zeros();
        for (g, (p, q)) in self.groups.iter().zip(self.cos_coef.iter().zip(&self.sin_coef)) {
            let (s, c) = g.k.dot(&x).sin_cos();
            v += p * c + q * s;
            grad += (q * c - p * s) * g.k.transpose();
        }
        (v, grad)
    }
}

/// Points, optionally with their Jacobians, advanced under one shared flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub time: f64,
    pub positions: Vec<Vec2>,
    pub jacobians: Option<Vec<Mat2>>,
}

impl Ensemble {
    pub fn new(positions: Vec<Vec2>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("positions", "ensemble must contain a point"));
        }
        Ok(Self {
            time: 0.0,
            positions,
            jacobians: None,
        })
    }

    pub fn with_jacobians(positions: Vec<Vec2>) -> Result<Self> {
        let mut ens = Self::new(positions)?;
        ens.jacobians = Some(vec![Mat2::identity(); ens.positions.len()]);
        Ok(ens)
    }

    /// Advance by `dt` using one fresh noise draw for every point.
    pub fn step<R: Rng + ?Sized>(&mut self, flow: &Flow, dt: f64, rng: &mut R) {
        let noise = flow.draw(rng);
        self.apply(&flow.field(&noise, dt), dt);
    }

    /// Advance with an already folded field.
    pub fn apply(&mut self, field: &StepField<'_>, dt: f64) {
        match &mut self.jacobians {
            Some(jacs) => {
                for (x, j) in self.positions.iter_mut().zip(jacs.iter_mut()) {
                    let (v, g) = field.displacement_and_gradient(*x);
                    *x += v;
                    *j = (Mat2::identity() + g) * *j;
                }
            }
            None => {
                for x in self.positions.iter_mut() {
                    *x += field.displacement(*x);
                }
            }
        }
        self.time += dt;
    }
}

/// Number of integrator steps covering `horizon` with steps no longer than `dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Saved trajectories `t ↦ φ_{tT}(x)` on a grid of scaled times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub horizon: f64,
    pub save_times: Vec<f64>,
    /// Raw positions, `paths[point][save_index]`.
    pub paths: Vec<Vec<Vec2>>,
}

impl PathBundle {
    /// Trajectory of point `i` divided by the horizon.
    pub fn scaled_path(&self, i: usize) -> geometry::DiscretePath {
        geometry::DiscretePath {
            times: self.save_times.clone(),
            values: self.paths[i].iter().map(|p| p / self.horizon).collect(),
        }
    }

    pub fn scaled_paths(&self) -> Vec<geometry::DiscretePath> {
        (0..self.paths.len()).map(|i| self.scaled_path(i)).collect()
    }
}

/// Uniform grid `0, 1/m, …, 1` of scaled save times.
pub fn uniform_save_times(intervals: usize) -> Vec<f64> {
    geometry::uniform_grid(intervals)
}

/// Run the flow to `horizon`, recording every initial point at `t_i · horizon`.
pub fn simulate_paths<R: Rng + ?Sized>(
    initial: &[Vec2],
    flow: &Flow,
    horizon: f64,
    dt: f64,
    save_times: &[f64],
    rng: &mut R,
) -> Result<PathBundle> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    if !(dt > 0.0) || dt > horizon {
        return Err(invalid("dt", format!("{dt} not in (0, horizon = {horizon}]")));
    }
    if save_times.len() < 2
        || save_times[0] != 0.0
        || *save_times.last().unwrap() != 1.0
        || save_times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(invalid(
            "save_times",
            "must increase strictly from 0 to 1",
        ));
    }
    let min_gap = save_times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if dt > horizon * min_gap * (1.0 + 1e-9) {
        return Err(invalid("dt", "coarser than the save grid"));
    }
    let n_steps = step_count(horizon, dt);
    let h = horizon / n_steps as f64;
    let save_steps: Vec<usize> = save_times
        .iter()
        .map(|t| (t * n_steps as f64).round() as usize)
        .collect();

    let mut ens = Ensemble::new(initial.to_vec())?;
    let mut paths: Vec<Vec<Vec2>> = initial
        .iter()
        .map(|_| Vec::with_capacity(save_times.len()))
        .collect();
    let mut next = 0;
    for step in 0..=n_steps {
        while next < save_steps.len() && save_steps[next] == step {
            for (p, x) in paths.iter_mut().zip(&ens.positions) {
                p.push(*x);
            }
            next += 1;
        }
        if step < n_steps {
            ens.step(flow, h, rng);
        }
    }
    if let Some(bad) = ens.positions.iter().find(|x| !(x.x.is_finite() && x.y.is_finite())) {
        return Err(Error::Numerical(format!("non-finite position {bad:?}")));
    }
    Ok(PathBundle {
        horizon,
        save_times: save_times.to_vec(),
        paths,
    })
}

/// Polyline approximation of the image of an initial curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveImage {
    pub vertices: Vec<Vec2>,
    /// Largest allowed gap between consecutive vertices.
    pub h_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub steps: usize,
    pub insertions: usize,
    pub max_gap: f64,
    pub max_vertices: usize,
}

impl CurveImage {
    pub fn new(vertices: Vec<Vec2>, h_max: f64) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(invalid("vertices", "a curve needs at least 2 vertices"));
        }
        if !(h_max > 0.0) {
            return Err(invalid("h_max", "must be positive"));
        }
        Ok(Self { vertices, h_max })
    }

    /// Straight segment from `a` to `b` split into pieces no longer than `spacing`.
    pub fn segment(a: Vec2, b: Vec2, spacing: f64, h_max: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        let n = ((b - a).norm() / spacing).ceil().max(1.0) as usize;
        let vertices = (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect();
        Self::new(vertices, h_max)
    }

    /// The default initial set: `{(u, 0) : u ∈ [0, 1]}`.
    pub fn unit_segment(h_max: f64) -> Result<Self> {
        Self::segment(Vec2::zeros(), Vec2::x(), DEFAULT_PRE_REFINE, h_max)
    }

    pub fn max_gap(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        geometry::diameter(&self.vertices)
    }

    /// Insert midpoints until no gap exceeds `h_max`; returns the insertion count.
    pub fn refine(&mut self, cap: usize) -> Result<usize> {
        let h2 = self.h_max * self.h_max;
        if self.vertices.windows(2).all(|w| (w[1] - w[0]).norm_squared() <= h2) {
            return Ok(0);
        }
        let mut out = Vec::with_capacity(self.vertices.len() + self.vertices.len() / 4);
        out.push(self.vertices[0]);
        for w in self.vertices.windows(2) {
            let (a, b) = (w[0], w[1]);
            let d2 = (b - a).norm_squared();
            if d2 > h2 {
                // smallest power-of-two split that meets h_max
                let mut parts = 2usize;
                while d2 > h2 * (parts * parts) as f64 {
                    parts *= 2;
                }
                for i in 1..parts {
                    out.push(a + (b - a) * (i as f64 / parts as f64));
                }
            }
            out.push(b);
            if out.len() > cap {
                return Err(Error::Resolution {
                    vertices: out.len(),
                    cap,
                    time: f64::NAN,
                });
            }
        }
        let inserted = out.len() - self.vertices.len();
        self.vertices = out;
        Ok(inserted)
    }
}

/// Evolve a curve image up to `t_end`, refining the current polyline after
/// every step. Zero steps return the input untouched.
pub fn evolve_curve<R: Rng + ?Sized>(
    curve: &CurveImage,
    flow: &Flow,
    dt: f64,
    t_end: f64,
    cap: usize,
    rng: &mut R,
) -> Result<(CurveImage, StepReport)> {
    let mut tracker = CurveTracker::new(curve.clone(), cap);
    let n_steps = step_count(t_end, dt);
    if n_steps == 0 {
        return Ok((tracker.curve, tracker.report));
    }
    let h = t_end / n_steps as f64;
    tracker.start()?;
    for _ in 0..n_steps {
        tracker.step(flow, h, rng)?;
    }
    let report = tracker.report;
    Ok((tracker.curve, report))
}

/// Curve evolution state shared by the hitting-time and persistence runs.
#[derive(Debug, Clone)]
pub struct CurveTracker {
    pub curve: CurveImage,
    pub time: f64,
    pub cap: usize,
    pub report: StepReport,
}

impl CurveTracker {
    pub fn new(curve: CurveImage, cap: usize) -> Self {
        let report = StepReport {
            max_gap: curve.max_gap(),
            max_vertices: curve.vertices.len(),
            ..StepReport::default()
        };
        Self {
            curve,
            time: 0.0,
            cap,
            report,
        }
    }

    fn refine(&mut self) -> Result<()> {
        let n = self.curve.refine(self.cap).map_err(|e| match e {
            Error::Resolution { vertices, cap, .. } => Error::Resolution {
                vertices,
                cap,
                time: self.time,
            },
            other => other,
        })?;
        self.report.insertions += n;
        self.report.max_gap = self.curve.max_gap();
        self.report.max_vertices = self.report.max_vertices.max(self.curve.vertices.len());
        Ok(())
    }

    /// Pre-refinement before the first step.
    pub fn start(&mut self) -> Result<()> {
        self.refine()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, flow: &Flow, dt: f64, rng: &mut R) -> Result<()> {
        let noise = flow.draw(rng);
        let field = flow.field(&noise, dt);
        for x in self.curve.vertices.iter_mut() {
            *x += field.displacement(*x);
        }
        self.time += dt;
        self.report.steps += 1;
        self.refine()
    }
}

/// Outcome of a hitting-time run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitResult {
    pub hit: bool,
    /// First step time at which the hit condition held (`t_max` on timeout).
    pub tau: f64,
    /// Tracked diameter at the hit (at timeout when no hit).
    pub diam_at_hit: f64,
    pub report: StepReport,
}

/// Whether the tracked image is within `radius` of `target` while large.
pub fn hits_as_large_set(vertices: &[Vec2], target: Vec2, radius: f64) -> Option<f64> {
    let r2 = radius * radius;
    if vertices.iter().any(|x| (x - target).norm_squared() <= r2) {
        let d = geometry::diameter(vertices);
        if d >= 1.0 {
            return Some(d);
        }
    }
    None
}

/// First step time at which the curve image meets `B_R(target)` while its
/// tracked diameter is at least 1.
#[allow(clippy::too_many_arguments)]
pub fn run_until_hit<R: Rng + ?Sized>(
    curve: &CurveImage,
    flow: &Flow,
    target: Vec2,
    radius: f64,
    dt: f64,
    t_max: f64,
    cap: usize,
    rng: &mut R,
) -> Result<HitResult> {
    if !(radius >= 1.0) {
        return Err(invalid("R", "must be >= 1"));
    }
    if !(t_max > 0.0) {
        return Err(invalid("t_max", "must be positive"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let mut tracker = CurveTracker::new(curve.clone(), cap);
    if let Some(d) = hits_as_large_set(&tracker.curve.vertices, target, radius) {
        return Ok(HitResult {
            hit: true,
            tau: 0.0,
            diam_at_hit: d,
            report: tracker.report,
        });
    }
    tracker.start()?;
    let n_steps = step_count(t_max, dt);
    for _ in 0..n_steps {
        tracker.step(flow, dt, rng)?;
        if let Some(d) = hits_as_large_set(&tracker.curve.vertices, target, radius) {
            return Ok(HitResult {
                hit: true,
                tau: tracker.time,
                diam_at_hit: d,
                report: tracker.report,
            });
        }
    }
    Ok(HitResult {
        hit: false,
        tau: tracker.time,
        diam_at_hit: tracker.curve.diameter(),
        report: tracker.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpectralModel;
    use crate::rng::replica_rng;

    fn l4() -> ModeSet {
        SpectralModel::single(1.0, 4, 1.0).build().unwrap()
    }

    fn default_like() -> ModeSet {
        SpectralModel::log_spaced(0.5, 5.0, 4, 16, 0.8).build().unwrap()
    }

    #[test]
    fn folded_field_matches_mode_sum() {
        let m = default_like();
        let flow = Flow::new(&m);
        let mut rng = replica_rng(5, 0);
        for _ in 0..20 {
            let noise = flow.draw(&mut rng);
            let field = flow.field(&noise, 0.03);
            let x = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let (v, g) = field.displacement_and_gradient(x);
            assert!((v - velocity_increment(&m, x, &noise, 0.03)).norm() < 1e-12);
            assert!((g - jacobian_increment(&m, x, &noise, 0.03)).abs().max() < 1e-12);
            assert_eq!(v, field.displacement(x));
        }
    }

    #[test]
    fn pairs_share_wave_groups() {
        let m = SpectralModel::single(1.0, 32, 0.5).build().unwrap();
        let flow = Flow::new(&m);
        assert_eq!(flow.groups.len(), 16);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = default_like();
        let mut rng = replica_rng(9, 1);
        let h = 1e-5;
        for _ in 0..100 {
            let noise = NoiseDraw::sample(m.len(), &mut rng);
            let x = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let jac = jacobian_increment(&m, x, &noise, 0.01);
            for (col, dir) in [Vec2::x(), Vec2::y()].iter().enumerate() {
                let fd = (velocity_increment(&m, x + dir * h, &noise, 0.01)
                    - velocity_increment(&m, x - dir * h, &noise, 0.01))
                    / (2.0 * h);
                assert!((fd - jac.column(col)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn solenoidal_increments_are_trace_free() {
        let m = SpectralModel::single(1.3, 8, 1.0).build().unwrap();
        let mut rng = replica_rng(2, 0);
        let noise = NoiseDraw::sample(m.len(), &mut rng);
        let j = jacobian_increment(&m, Vec2::new(0.4, -2.0), &noise, 0.01);
        assert!(j.trace().abs() < 1e-14);
        let z = jacobian_increment(&m, Vec2::new(0.4, -2.0), &NoiseDraw::zeros(m.len()), 0.01);
        assert_eq!(z, Mat2::zeros());
    }

    #[test]
    fn coincident_points_stay_coincident() {
        let flow = Flow::new(&default_like());
        let p = Vec2::new(0.3, 0.1);
        let mut ens = Ensemble::new(vec![p, Vec2::new(2.0, 0.0), p]).unwrap();
        let mut rng = replica_rng(1, 0);
        for _ in 0..500 {
            ens.step(&flow, 0.01, &mut rng);
        }
        assert_eq!(ens.positions[0], ens.positions[2]);
        assert_ne!(ens.positions[0], ens.positions[1]);
    }

    #[test]
    fn shared_points_follow_identical_paths() {
        let flow = Flow::new(&default_like());
        let p = Vec2::new(-0.7, 0.2);
        let mut a = Ensemble::new(vec![p]).unwrap();
        let mut b = Ensemble::new(vec![Vec2::new(3.0, 3.0), p, Vec2::new(1.0, 0.0)]).unwrap();
        let (mut ra, mut rb) = (replica_rng(4, 2), replica_rng(4, 2));
        for _ in 0..300 {
            a.step(&flow, 0.01, &mut ra);
            b.step(&flow, 0.01, &mut rb);
        }
        assert_eq!(a.positions[0], b.positions[1]);
    }

    #[test]
    fn jacobians_start_at_identity() {
        let ens = Ensemble::with_jacobians(vec![Vec2::zeros(); 3]).unwrap();
        assert!(ens.jacobians.unwrap().iter().all(|j| *j == Mat2::identity()));
        assert!(Ensemble::new(vec![]).is_err());
    }

    #[test]
    fn simulate_paths_contracts() {
        let flow = Flow::new(&l4());
        let init = vec![Vec2::new(0.5, 0.0), Vec2::new(1.0, 2.0)];
        let b = simulate_paths(&init, &flow, 10.0, 0.01, &[0.0, 1.0], &mut replica_rng(1, 0)).unwrap();
        assert_eq!(b.scaled_path(0).values[0], init[0] / 10.0);
        assert_eq!(b.scaled_path(1).values[0], init[1] / 10.0);
        assert!(simulate_paths(&init, &flow, 1.0, 2.0, &[0.0, 1.0], &mut replica_rng(1, 0)).is_err());
        assert!(simulate_paths(&init, &flow, 1.0, 0.1, &[0.0, 0.5], &mut replica_rng(1, 0)).is_err());
        let again = simulate_paths(&init, &flow, 10.0, 0.01, &[0.0, 1.0], &mut replica_rng(1, 0)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn segment_smoke_run() {
        let flow = Flow::new(&l4());
        let init: Vec<Vec2> = (0..50).map(|i| Vec2::new(i as f64 / 49.0, 0.0)).collect();
        let b = simulate_paths(&init, &flow, 10.0, 0.01, &uniform_save_times(5), &mut replica_rng(3, 0))
            .unwrap();
        for p in b.scaled_paths() {
            assert_eq!(p.values.len(), 6);
            assert!(p.values.iter().all(|v| v.norm().is_finite() && v.norm() < 100.0));
        }
    }

    #[test]
    fn zero_time_curve_is_unchanged() {
        let c = CurveImage::new(vec![Vec2::zeros(), Vec2::x()], 0.05).unwrap();
        let (out, rep) = evolve_curve(&c, &Flow::new(&l4()), 0.01, 0.0, 1000, &mut replica_rng(0, 0)).unwrap();
        assert_eq!(out, c);
        assert_eq!(rep.insertions, 0);
    }

    #[test]
    fn prerefinement_of_unit_segment() {
        let mut c = CurveImage::new(vec![Vec2::zeros(), Vec2::x()], 0.05).unwrap();
        c.refine(1000).unwrap();
        assert!(c.vertices.len() >= 20);
        assert!(c.max_gap() <= 0.05);
        let c = CurveImage::unit_segment(0.1).unwrap();
        assert_eq!(c.vertices.len(), 51);
    }

    #[test]
    fn evolved_curve_stays_resolved() {
        let c = CurveImage::unit_segment(0.1).unwrap();
        let flow = Flow::new(&SpectralModel::single(1.0, 16, 1.0).build().unwrap());
        let (out, rep) = evolve_curve(&c, &flow, 0.01, 3.0, 100_000, &mut replica_rng(6, 0)).unwrap();
        assert!(out.max_gap() <= 0.1);
        assert_eq!(rep.steps, 300);
        assert!(out.vertices.len() >= 51);
        let brute = out
            .vertices
            .iter()
            .flat_map(|a| out.vertices.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        assert!(out.diameter() >= brute - 1e-12);
    }

    #[test]
    fn vertex_cap_aborts() {
        let c = CurveImage::unit_segment(0.001).unwrap();
        let flow = Flow::new(&l4());
        let err = evolve_curve(&c, &flow, 0.01, 1.0, 200, &mut replica_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
    }

    #[test]
    fn immediate_hit_and_timeout() {
        let flow = Flow::new(&l4());
        let c = CurveImage::unit_segment(0.1).unwrap();
        let r = run_until_hit(&c, &flow, Vec2::new(0.5, 0.5), 1.0, 0.01, 1.0, 10_000, &mut replica_rng(0, 0))
            .unwrap();
        assert!(r.hit);
        assert_eq!(r.tau, 0.0);
        let r = run_until_hit(&c, &flow, Vec2::new(100.0, 0.0), 1.0, 0.01, 0.5, 10_000, &mut replica_rng(0, 0))
            .unwrap();
        assert!(!r.hit);
        assert!(run_until_hit(&c, &flow, Vec2::zeros(), 0.5, 0.01, 1.0, 10, &mut replica_rng(0, 0)).is_err());
    }
}
