//! Metric geometry on discretised paths.
//!
//! The distance from a path `g` to the Lipschitz ball `Lip(K)` (paths with
//! `f(0) = 0` and speed at most `K`) is computed on the save grid by bisection
//! on `ε` over a forward reachability recursion
//!
//! ```text
//! R₀ = {0}                                   (if |g₀| ≤ ε)
//! Rᵢ = (Rᵢ₋₁ ⊕ disc(K·Δtᵢ)) ∩ disc(gᵢ, ε)
//! ```
//!
//! with both discs replaced by inscribed regular `V`-gons. The chain is
//! feasible iff every `Rᵢ` is nonempty, so the result is an upper bound on
//! the grid distance, off by at most the polygon defect plus the bisection
//! tolerance.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::Vec2;

/// Default polygon resolution for discs.
pub const DEFAULT_POLY_VERTS: usize = 64;
/// Default bisection tolerance on `ε`.
pub const DEFAULT_EPS_TOL: f64 = 1e-4;
/// Slack allowed on Lipschitz increments.
pub const LIP_SLACK: f64 = 1e-9;

const DIAMETER_BRUTE_MAX: usize = 500;

/// Largest pairwise distance. Above 500 points the scan runs over the convex
/// hull only, which contains every diametral pair.
pub fn diameter(points: &[Vec2]) -> f64 {
    if points.len() <= DIAMETER_BRUTE_MAX {
        return brute_diameter(points);
    }
    let hull = convex_hull(points);
    brute_diameter(&hull)
}

fn brute_diameter(points: &[Vec2]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain hull, counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Path sampled on a grid of scaled times in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub times: Vec<f64>,
    pub values: Vec<Vec2>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, values: Vec<Vec2>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(invalid("values", "one value per grid time required"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times", "must be strictly increasing"));
        }
        if values.iter().any(|v| !(v.x.is_finite() && v.y.is_finite())) {
            return Err(invalid("values", "must be finite"));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether `f(t₀) = 0` (to `anchor_tol`) and every increment obeys speed `k`.
    pub fn is_lipschitz(&self, k: f64, anchor_tol: f64) -> bool {
        self.values[0].norm() <= anchor_tol
            && self
                .times
                .windows(2)
                .zip(self.values.windows(2))
                .all(|(t, v)| (v[1] - v[0]).norm() <= k * (t[1] - t[0]) + LIP_SLACK)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

fn same_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} grid points",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
        return Err(Error::GridMismatch(format!(
            "time {i} differs: {} vs {}",
            a[i], b[i]
        )));
    }
    Ok(())
}

/// Uniform grid `0, 1/m, …, 1`.
pub fn uniform_grid(intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| i as f64 / intervals as f64).collect()
}

/// `max_i |g_i − f_i|`.
pub fn sup_distance(g: &DiscretePath, f: &DiscretePath) -> Result<f64> {
    same_grid(&g.times, &f.times)?;
    Ok(sup_distance_unchecked(&g.values, &f.values))
}

fn sup_distance_unchecked(g: &[Vec2], f: &[Vec2]) -> f64 {
    g.iter()
        .zip(f)
        .map(|(a, b)| (a - b).norm_squared())
        .fold(0.0, f64::max)
        .sqrt()
}

/// Convex polygon, counterclockwise. No vertices means the empty set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexRegion {
    pub vertices: Vec<Vec2>,
}

impl ConvexRegion {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn point(p: Vec2) -> Self {
        Self { vertices: vec![p] }
    }

    /// Regular `n`-gon inscribed in the disc of radius `r` around `c`,
    /// with a vertex at angle 0.
    pub fn inscribed_disc(c: Vec2, r: f64, n: usize) -> Self {
        if r <= 0.0 {
            return Self::point(c);
        }
        let vertices = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                c + Vec2::new(a.cos(), a.sin()) * r
            })
            .collect();
        Self { vertices }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return true;
        }
        (0..n).all(|i| {
            let (a, b, c) = (
                self.vertices[i],
                self.vertices[(i + 1) % n],
                self.vertices[(i + 2) % n],
            );
            cross(a, b, c) >= -1e-12
        })
    }

    fn lowest_first(&self) -> Vec<Vec2> {
        let n = self.vertices.len();
        let start = (0..n)
            .min_by(|&i, &j| {
                let (a, b) = (self.vertices[i], self.vertices[j]);
                a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x))
            })
            .unwrap_or(0);
        (0..n).map(|i| self.vertices[(start + i) % n]).collect()
    }

    /// Minkowski sum by merging edge sequences sorted by angle.
    pub fn minkowski_sum(&self, other: &ConvexRegion) -> ConvexRegion {
        if self.is_empty() || other.is_empty() {
            return Self::empty();
        }
        let mut p = self.lowest_first();
        let mut q = other.lowest_first();
        let (n, m) = (p.len(), q.len());
        p.push(p[0]);
        p.push(p[1 % n]);
        q.push(q[0]);
        q.push(q[1 % m]);
        let mut out = Vec::with_capacity(n + m);
        let (mut i, mut j) = (0, 0);
        while i < n || j < m {
            out.push(p[i] + q[j]);
            let ep = p[i + 1] - p[i];
            let eq = q[j + 1] - q[j];
            let c = ep.x * eq.y - ep.y * eq.x;
            if c >= 0.0 && i < n {
                i += 1;
            }
            if c <= 0.0 && j < m {
                j += 1;
            }
        }
        ConvexRegion { vertices: out }.cleaned()
    }

    /// Keep the part with `⟨normal, x⟩ ≤ offset`.
    pub fn clip(&self, normal: Vec2, offset: f64) -> ConvexRegion {
        let n = self.vertices.len();
        if n == 0 {
            return Self::empty();
        }
        let side = |p: &Vec2| normal.dot(p) - offset;
        if self.vertices.iter().all(|p| side(p) <= 0.0) {
            return self.clone();
        }
        if n == 1 {
            return Self::empty();
        }
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let (sa, sb) = (side(&a), side(&b));
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
                out.push(a + (b - a) * (sa / (sa - sb)));
            }
        }
        ConvexRegion { vertices: out }.cleaned()
    }

    /// Intersection with the inscribed `n`-gon of the disc `B(c, r)`.
    pub fn intersect_disc(&self, c: Vec2, r: f64, n: usize) -> ConvexRegion {
        let apothem = r * (PI / n as f64).cos();
        let mut region = self.clone();
        for i in 0..n {
            let a = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            let normal = Vec2::new(a.cos(), a.sin());
            region = region.clip(normal, normal.dot(&c) + apothem);
            if region.is_empty() {
                break;
            }
        }
        region
    }

    /// Drop repeated and collinear vertices.
    fn cleaned(mut self) -> Self {
        const TOL: f64 = 1e-14;
        self.vertices.dedup_by(|a, b| (*a - *b).norm() <= TOL);
        while self.vertices.len() > 1
            && (self.vertices[0] - self.vertices[self.vertices.len() - 1]).norm() <= TOL
        {
            self.vertices.pop();
        }
        if self.vertices.len() < 3 {
            return self;
        }
        let mut changed = true;
        while changed && self.vertices.len() >= 3 {
            changed = false;
            let n = self.vertices.len();
            for i in 0..n {
                let (a, b, c) = (
                    self.vertices[(i + n - 1) % n],
                    self.vertices[i],
                    self.vertices[(i + 1) % n],
                );
                let scale = (c - a).norm().max(TOL);
                if cross(a, b, c).abs() <= TOL * scale {
                    self.vertices.remove(i);
                    changed = true;
                    break;
                }
            }
        }
        self
    }
}

/// Whether some grid path `f` with `f₀ = 0`, `|fᵢ − gᵢ| ≤ ε` and
/// `|fᵢ − fᵢ₋₁| ≤ K·Δtᵢ` exists (polygonal discs with `verts` vertices).
pub fn lip_feasible(g: &DiscretePath, k: f64, eps: f64, verts: usize) -> bool {
    let anchor = ConvexRegion::point(Vec2::zeros()).intersect_disc(g.values[0], eps, verts);
    if anchor.is_empty() {
        return false;
    }
    let mut region = anchor;
    for i in 1..g.len() {
        let step = k * (g.times[i] - g.times[i - 1]);
        region = region
            .minkowski_sum(&ConvexRegion::inscribed_disc(Vec2::zeros(), step, verts))
            .intersect_disc(g.values[i], eps, verts);
        if region.is_empty() {
            return false;
        }
    }
    true
}

/// Upper bound on `d(g, Lip(K))` on the grid of `g`, see the module docs.
pub fn dist_to_lip(g: &DiscretePath, k: f64, eps_tol: f64, verts: usize) -> Result<f64> {
    if verts < 16 {
        return Err(invalid("poly_verts", "need at least 16 vertices"));
    }
    if !(eps_tol > 0.0) {
        return Err(invalid("eps_tol", "must be positive"));
    }
    if !(k > 0.0) {
        return Err(invalid("K", "must be positive"));
    }
    if g.is_lipschitz(k, 0.0) {
        return Ok(0.0);
    }
    let lo_bound = dist_to_lip_1d(&g.times, &g.values.iter().map(|v| v.x).collect::<Vec<_>>(), k)
        .max(dist_to_lip_1d(&g.times, &g.values.iter().map(|v| v.y).collect::<Vec<_>>(), k));
    let mut lo = lo_bound;
    // f ≡ 0 is feasible once every polygon around g_i contains the origin
    let mut hi = g.sup_norm() / (PI / verts as f64).cos() * (1.0 + 1e-12) + 1e-15;
    debug_assert!(lip_feasible(g, k, hi, verts));
    let mut worst_infeasible = f64::NEG_INFINITY;
    let mut best_feasible = hi;
    while hi - lo > eps_tol {
        let mid = 0.5 * (lo + hi);
        if lip_feasible(g, k, mid, verts) {
            best_feasible = best_feasible.min(mid);
            hi = mid;
        } else {
            worst_infeasible = worst_infeasible.max(mid);
            lo = mid;
        }
        debug_assert!(
            worst_infeasible < best_feasible,
            "feasibility not monotone in eps"
        );
    }
    Ok(hi)
}

/// Exact distance of a scalar grid path to the one-dimensional `Lip(K)` with
/// anchor `f(t₀) = 0`:
/// `max{0, maxᵢ(|gᵢ| − K tᵢ), max_{i<j}(|gᵢ − gⱼ| − K(tⱼ − tᵢ))/2}`.
pub fn dist_to_lip_1d(times: &[f64], g: &[f64], k: f64) -> f64 {
    let mut eps: f64 = 0.0;
    for i in 0..g.len() {
        eps = eps.max(g[i].abs() - k * times[i]);
        for j in i + 1..g.len() {
            eps = eps.max(0.5 * ((g[i] - g[j]).abs() - k * (times[j] - times[i])));
        }
    }
    eps
}

/// Finite sample of `Lip(K)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LipNet {
    pub k: f64,
    pub paths: Vec<DiscretePath>,
    pub resolution: NetResolution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetResolution {
    pub mesh: f64,
    pub directions: usize,
    pub levels: usize,
    pub samples: usize,
    pub enumerated: bool,
}

fn net_alphabet(k: f64, dt: f64, directions: usize, levels: usize) -> Vec<Vec2> {
    let mut alphabet = vec![Vec2::zeros()];
    for l in 1..=levels {
        let mag = k * dt * l as f64 / levels as f64;
        for d in 0..directions {
            let a = 2.0 * PI * d as f64 / directions as f64;
            alphabet.push(Vec2::new(a.cos(), a.sin()) * mag);
        }
    }
    alphabet
}

/// Piecewise-linear `Lip(K)` paths on `grid_points` uniform times, built from
/// increments `K·Δt·(ℓ/levels)·(cos 2πd/D, sin 2πd/D)` or zero. All
/// `(D·levels + 1)^(m−1)` combinations are emitted when that does not exceed
/// `cap`; otherwise `cap` paths are sampled uniformly from the same alphabet.
pub fn build_lip_net<R: Rng + ?Sized>(
    k: f64,
    grid_points: usize,
    directions: usize,
    levels: usize,
    cap: usize,
    rng: &mut R,
) -> Result<LipNet> {
    if grid_points < 2 {
        return Err(invalid("grid_points", "need at least 2"));
    }
    if directions < 4 {
        return Err(invalid("directions", "need at least 4"));
    }
    if levels < 1 {
        return Err(invalid("levels", "need at least 1"));
    }
    if !(k > 0.0) {
        return Err(invalid("K", "must be positive"));
    }
    let intervals = grid_points - 1;
    let dt = 1.0 / intervals as f64;
    let times = uniform_grid(intervals);
    let alphabet = net_alphabet(k, dt, directions, levels);
    let a = alphabet.len();
    let total = (a as f64).powi(intervals as i32);
    let enumerated = total <= cap as f64;
    let build = |choice: &mut dyn FnMut(usize) -> usize| {
        let mut values = Vec::with_capacity(grid_points);
        let mut pos = Vec2::zeros();
        values.push(pos);
        for i in 0..intervals {
            pos += alphabet[choice(i)];
            values.push(pos);
        }
        DiscretePath {
            times: times.clone(),
            values,
        }
    };
    let paths: Vec<DiscretePath> = if enumerated {
        (0..total as usize)
            .map(|mut code| {
                build(&mut |_| {
                    let c = code % a;
                    code /= a;
                    c
                })
            })
            .collect()
    } else {
        (0..cap)
            .map(|_| build(&mut |_| rng.random_range(0..a)))
            .collect()
    };
    let samples = paths.len();
    Ok(LipNet {
        k,
        paths,
        resolution: NetResolution {
            mesh: dt,
            directions,
            levels,
            samples,
            enumerated,
        },
    })
}

/// Exact `min_f sup_i |f_i − g_i|` over the full product net with the given
/// alphabet, by depth-first branch and bound. Never materialises the net.
pub fn nearest_in_full_net(g: &DiscretePath, k: f64, directions: usize, levels: usize) -> f64 {
    let intervals = g.len() - 1;
    let dt = 1.0 / intervals as f64;
    let alphabet = net_alphabet(k, dt, directions, levels);

    // greedy start for the incumbent
    let mut pos = Vec2::zeros();
    let mut best = g.values[0].norm();
    for i in 1..g.len() {
        let step = alphabet
            .iter()
            .min_by(|a, b| {
                (pos + *a - g.values[i])
                    .norm_squared()
                    .total_cmp(&(pos + *b - g.values[i]).norm_squared())
            })
            .copied()
            .unwrap();
        pos += step;
        best = best.max((pos - g.values[i]).norm());
    }

    fn search(
        depth: usize,
        pos: Vec2,
        worst: f64,
        g: &DiscretePath,
        alphabet: &[Vec2],
        best: &mut f64,
    ) {
        if depth == g.len() {
            *best = best.min(worst);
            return;
        }
        for a in alphabet {
            let next = pos + a;
            let w = worst.max((next - g.values[depth]).norm());
            if w < *best {
                search(depth + 1, next, w, g, alphabet, best);
            }
        }
    }
    let start = g.values[0].norm();
    if start < best {
        search(1, Vec2::zeros(), start, g, &alphabet, &mut best);
    }
    best
}

/// Both one-sided distances between a path sample and `Lip(K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HausdorffEstimate {
    /// `sup_g d(g, Lip(K))` over the sampled trajectories.
    pub d_upper: f64,
    /// `sup_f d(f, F_T)` over the net members.
    pub d_lower: f64,
    pub d_h: f64,
}

/// One-sided distances between the bundle paths and `Lip(K)` represented by
/// `net`. `d_upper` is an upper-bound estimate restricted to the sampled
/// paths; `d_lower` only sees net members, so it is biased low.
pub fn hausdorff_estimate(
    bundle: &[DiscretePath],
    k: f64,
    net: &LipNet,
    eps_tol: f64,
    verts: usize,
) -> Result<HausdorffEstimate> {
    if bundle.is_empty() || net.paths.is_empty() {
        return Err(invalid("bundle", "both path sets must be nonempty"));
    }
    let grid = &bundle[0].times;
    for p in bundle.iter().chain(&net.paths) {
        same_grid(grid, &p.times)?;
    }
    let mut d_upper: f64 = 0.0;
    for g in bundle {
        d_upper = d_upper.max(dist_to_lip(g, k, eps_tol, verts)?);
    }
    let d_lower = directed_sup_inf(&net.paths, bundle);
    Ok(HausdorffEstimate {
        d_upper,
        d_lower,
        d_h: d_upper.max(d_lower),
    })
}

/// `sup_{a ∈ from} min_{b ∈ to} ‖a − b‖_∞` on a shared grid.
pub fn directed_sup_inf(from: &[DiscretePath], to: &[DiscretePath]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in from {
        let mut nearest = f64::INFINITY;
        for b in to {
            // early exit once this candidate cannot beat the current nearest
            let mut d2: f64 = 0.0;
            for (x, y) in a.values.iter().zip(&b.values) {
                d2 = d2.max((x - y).norm_squared());
                if d2 >= nearest {
                    break;
                }
            }
            nearest = nearest.min(d2);
            if nearest <= worst {
                break;
            }
        }
        worst = worst.max(nearest);
    }
    worst.sqrt()
}

/// Hausdorff distance between two finite path sets in the sup norm.
pub fn hausdorff_finite(a: &[DiscretePath], b: &[DiscretePath]) -> Result<f64> {
    if let (Some(x), Some(y)) = (a.first(), b.first()) {
        for p in a.iter().chain(b) {
            same_grid(&x.times, &p.times)?;
        }
        same_grid(&x.times, &y.times)?;
    }
    Ok(directed_sup_inf(a, b).max(directed_sup_inf(b, a)))
}
