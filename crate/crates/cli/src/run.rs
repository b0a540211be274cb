//! Experiment orchestration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ibflab_core::estimators::{
    self, CurveParams, EstimateResult, HitOutcome, HittingParams, NetParams, StableNormEstimate,
    SupportParams,
};
use ibflab_core::flow::{CurveImage, Flow, DEFAULT_PRE_REFINE};
use ibflab_core::model::ModeSet;
use ibflab_core::rng::{derive_seed, replica_rng};
use ibflab_core::{Mat2, Vec2};
use rand::Rng;

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::output::{fmt_f64, OutputDir, RunManifest, Table, MODEL_NOTES};

/// Largest sampled isotropy defect accepted for estimator runs.
pub const MAX_ISOTROPY_DEFECT: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("runtime error: {0}")]
    Runtime(#[from] ibflab_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unreliable estimates: {}", .0.join("; "))]
    Unreliable(Vec<String>),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) | RunError::Io(_) => 3,
            RunError::Unreliable(_) => 4,
        }
    }
}

/// One row of `suite.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub experiment: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub k_hat: Option<f64>,
    pub files: Vec<PathBuf>,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    modes: ModeSet,
    flow: Flow,
    out: OutputDir,
    summary: RunSummary,
    k_hat: Option<f64>,
}

fn bool_str(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

fn est_cols(e: &EstimateResult) -> [String; 4] {
    [
        fmt_f64(e.value),
        fmt_f64(e.std_error),
        fmt_f64(e.ci95.0),
        fmt_f64(e.ci95.1),
    ]
}

impl Context<'_> {
    fn seed(&self, purpose: &str) -> u64 {
        derive_seed(self.cfg.master_seed, purpose)
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<(), RunError> {
        self.out.write_table(name, table)?;
        self.summary.files.push(self.out.root.join(name));
        Ok(())
    }

    fn check(&mut self, experiment: &'static str, name: &'static str, value: f64, threshold: f64, pass: bool) {
        self.summary.checks.push(Check {
            experiment,
            name,
            value,
            threshold,
            pass,
        });
    }

    fn curve_params(&self) -> CurveParams {
        let c = self.cfg.sim.curve.as_ref().expect("checked");
        CurveParams {
            dt: c.dt,
            h_max: c.h_max,
            vertex_cap: c.vertex_cap,
        }
    }

    fn cov_check(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.cov_check.clone().expect("checked");
        let mut rng = replica_rng(self.seed("cov-check"), 0);
        let radius = 2.0 * PI / self.modes.min_wavenumber();
        let points: Vec<Vec2> = (0..c.n_points)
            .map(|_| {
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let norm_err = (self.modes.covariance_at(Vec2::zeros()) - Mat2::identity()).abs().max();
        let mut parity: f64 = 0.0;
        for &x in &points {
            let b = self.modes.covariance_at(x);
            parity = parity
                .max((b - self.modes.covariance_at(-x)).abs().max())
                .max((b - b.transpose()).abs().max());
        }
        let l = self.modes.angular_order;
        let sym_angles: Vec<f64> = (1..l).map(|j| 2.0 * PI * j as f64 / l as f64).collect();
        let sym = self.modes.rotation_defect(&sym_angles, &points);
        let grid: Vec<f64> = (1..=c.r_points)
            .map(|i| c.r_max * i as f64 / c.r_points as f64)
            .collect();
        let kappa = self.modes.check_kappa_bound(&grid);
        let iso = self
            .modes
            .isotropy_defect(c.n_rotations, c.n_points, self.seed("isotropy"))?;
        let m = self.modes.moduli();
        let mu1_gap = (m.mu1 - 0.5 * (m.beta_n - m.beta_l)).abs();
        let mu2_gap = (m.mu2 + m.beta_l).abs();
        let rows = [
            ("normalization", norm_err, 1e-10),
            ("parity_symmetry", parity, 1e-10),
            ("rotation_symmetry", sym, 1e-10),
            ("kappa_bound", kappa, 1e-12),
            ("isotropy_defect", iso, MAX_ISOTROPY_DEFECT),
            ("mu1_formula", mu1_gap, 0.0),
            ("mu2_formula", mu2_gap, 0.0),
        ];
        let mut t = Table::new(&["check", "value", "tolerance", "pass"]);
        for (name, value, tol) in rows {
            let pass = value <= tol;
            t.push(vec![name.into(), fmt_f64(value), fmt_f64(tol), bool_str(pass)]);
            self.check("cov-check", name, value, tol, pass);
        }
        self.write("cov_check.csv", &t)
    }

    fn diffusivity(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.diffusivity.clone().expect("checked");
        let e = estimators::one_point_diffusivity(
            &self.flow,
            c.horizon,
            c.dt,
            c.n_replicas,
            self.seed("diffusivity"),
        )?;
        let mut t = Table::new(&["T", "dt", "n_replicas", "estimate", "std_error", "ci_low", "ci_high"]);
        let mut row = vec![fmt_f64(c.horizon), fmt_f64(c.dt), c.n_replicas.to_string()];
        row.extend(est_cols(&e));
        t.push(row);
        let z = e.z_distance(&EstimateResult::new(1.0, 0.0, 1));
        self.check("diffusivity", "unit_diffusivity_z", z, 3.0, z <= 3.0);
        self.write("diffusivity.csv", &t)
    }

    fn lyapunov(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.lyapunov.clone().expect("checked");
        let est = estimators::estimate_lyapunov(
            &self.flow,
            c.horizon,
            c.dt,
            c.n_replicas,
            c.renorm_every,
            self.seed("lyapunov"),
        )?;
        let mut t = Table::new(&["replica", "mu1", "mu2", "T", "dt"]);
        for (i, r) in est.replicas.iter().enumerate() {
            t.push(vec![
                i.to_string(),
                fmt_f64(r.mu1),
                fmt_f64(r.mu2),
                fmt_f64(c.horizon),
                fmt_f64(c.dt),
            ]);
        }
        self.write("lyapunov.csv", &t)?;
        let m = self.modes.moduli();
        let mut s = Table::new(&["quantity", "estimate", "std_error", "ci_low", "ci_high", "moduli_value"]);
        for (name, e, target) in [("mu1", &est.mu1, m.mu1), ("mu2", &est.mu2, m.mu2)] {
            let mut row = vec![name.to_string()];
            row.extend(est_cols(e));
            row.push(fmt_f64(target));
            s.push(row);
        }
        self.write("lyapunov_summary.csv", &s)?;
        for (name, e, target) in [("mu1_vs_moduli", &est.mu1, m.mu1), ("mu2_vs_moduli", &est.mu2, m.mu2)] {
            let tol = (3.0 * e.std_error).max(0.1 * target.abs());
            let gap = (e.value - target).abs();
            self.check("lyapunov", name, gap, tol, gap <= tol);
        }
        Ok(())
    }

    fn hitting_params(&self) -> Result<HittingParams, RunError> {
        let h = self.cfg.sim.hitting.clone().expect("checked");
        let curve = self.curve_params();
        let k_rough = match (h.k_rough, &h.pilot) {
            (Some(k), _) => k,
            (None, Some(p)) => {
                let pilot = HittingParams {
                    curve,
                    radius: h.radius,
                    t_max_factor: p.t_max / p.distance,
                    k_rough: 1.0,
                };
                estimators::pilot_speed(
                    &self.flow,
                    p.distance,
                    &pilot,
                    p.n_replicas,
                    self.seed("pilot"),
                )?
            }
            (None, None) => unreachable!("validated"),
        };
        Ok(HittingParams {
            curve,
            radius: h.radius,
            t_max_factor: h.t_max_factor,
            k_rough,
        })
    }

    fn stable_norm(&mut self) -> Result<f64, RunError> {
        let c = self.cfg.sim.stable_norm.clone().expect("checked");
        let params = self.hitting_params()?;
        let mut runs = Table::new(&["angle", "distance", "replica", "outcome", "tau", "max_vertices"]);
        let mut summary = Table::new(&[
            "angle",
            "distance",
            "n_runs",
            "completed",
            "timeouts",
            "unresolved",
            "tau_over_dist",
            "std_error",
            "unreliable",
        ]);
        let mut per_direction: Vec<StableNormEstimate> = Vec::new();
        for i in 0..c.directions {
            let angle = 2.0 * PI * i as f64 / c.directions as f64;
            let dir = Vec2::new(angle.cos(), angle.sin());
            let distances = if i == 0 { &c.distances[..] } else { &c.distances[..1] };
            let est = estimators::estimate_stable_norm(
                &self.flow,
                dir,
                distances,
                &params,
                c.n_replicas,
                self.seed(&format!("stable-norm/{i}")),
            )?;
            for d in &est.distances {
                for (r, o) in d.outcomes.iter().enumerate() {
                    let (name, tau, verts) = match *o {
                        HitOutcome::Hit { tau, max_vertices } => ("hit", fmt_f64(tau), max_vertices.to_string()),
                        HitOutcome::Timeout => ("timeout", String::new(), String::new()),
                        HitOutcome::Unresolved => ("unresolved", String::new(), String::new()),
                    };
                    runs.push(vec![
                        fmt_f64(angle),
                        fmt_f64(d.distance),
                        r.to_string(),
                        name.into(),
                        tau,
                        verts,
                    ]);
                }
                summary.push(vec![
                    fmt_f64(angle),
                    fmt_f64(d.distance),
                    d.n_runs.to_string(),
                    (d.n_runs - d.timeouts - d.unresolved).to_string(),
                    d.timeouts.to_string(),
                    d.unresolved.to_string(),
                    fmt_f64(d.tau_over_dist.value),
                    fmt_f64(d.tau_over_dist.std_error),
                    bool_str(d.unreliable),
                ]);
                if d.unreliable {
                    self.summary.warnings.push(format!(
                        "stable-norm: censored fraction {:.3} at angle {angle:.4}, distance {}",
                        d.censored_fraction, d.distance
                    ));
                }
            }
            per_direction.push(est);
        }
        self.write("stable_norm_runs.csv", &runs)?;
        self.write("stable_norm.csv", &summary)?;

        let base = &per_direction[0];
        if base.distances.len() >= 2 {
            let a = &base.distances[base.distances.len() - 2].tau_over_dist;
            let b = &base.distances[base.distances.len() - 1].tau_over_dist;
            let z = a.z_distance(b);
            self.check("stable-norm", "distance_trend_z", z, 2.0, z <= 2.0);
        }
        if per_direction.len() >= 2 {
            let z = isotropy_max_z(
                &per_direction
                    .iter()
                    .map(|e| e.distances[0].tau_over_dist)
                    .collect::<Vec<_>>(),
            );
            self.check("stable-norm", "direction_spread_z", z, 2.0, z <= 2.0);
        }
        self.check("stable-norm", "k_hat_rel_se", base.k_hat_rel_se, 0.1, base.k_hat > 0.0 && base.k_hat_rel_se < 0.1);
        self.k_hat = Some(base.k_hat);
        Ok(base.k_hat)
    }

    fn k_hat(&mut self) -> Result<f64, RunError> {
        if let Some(k) = self.cfg.k_hat.or(self.k_hat) {
            return Ok(k);
        }
        self.stable_norm()
    }

    fn shape(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.shape.clone().expect("checked");
        let k_hat = self.k_hat()?;
        let curve = self.curve_params();
        let mut t = Table::new(&[
            "T", "eps", "K_hat", "outer", "outer_se", "inner", "inner_se", "both", "both_se", "completed", "unresolved",
        ]);
        let mut reports = Vec::new();
        for (i, &horizon) in c.horizons.iter().enumerate() {
            let rep = estimators::shape_experiment(
                &self.flow,
                horizon,
                c.eps,
                c.n_directions,
                k_hat,
                c.radius,
                &curve,
                c.save_every,
                c.n_replicas,
                self.seed(&format!("shape/{i}")),
            )?;
            t.push(vec![
                fmt_f64(horizon),
                fmt_f64(c.eps),
                fmt_f64(k_hat),
                fmt_f64(rep.outer.value),
                fmt_f64(rep.outer.std_error),
                fmt_f64(rep.inner.value),
                fmt_f64(rep.inner.std_error),
                fmt_f64(rep.both.value),
                fmt_f64(rep.both.std_error),
                rep.both.n_replicas.to_string(),
                rep.unresolved.to_string(),
            ]);
            reports.push(rep);
        }
        self.write("shape.csv", &t)?;
        let mut worst: f64 = f64::NEG_INFINITY;
        for w in reports.windows(2) {
            let drop = w[0].both.value - w[1].both.value;
            let slack = 2.0 * w[0].both.std_error.hypot(w[1].both.std_error);
            worst = worst.max(drop - slack);
        }
        if reports.len() >= 2 {
            self.check("shape", "inclusion_trend", worst, 0.0, worst <= 0.0);
        }
        Ok(())
    }

    fn persistence(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.persistence.clone().expect("checked");
        let curve = self.curve_params();
        let gamma = CurveImage::segment(
            Vec2::zeros(),
            Vec2::new(c.segment_length, 0.0),
            DEFAULT_PRE_REFINE,
            curve.h_max,
        )?;
        let mut t = Table::new(&["T", "fraction", "std_error", "drops", "completed", "unresolved"]);
        let mut results = Vec::new();
        for (i, &horizon) in c.horizons.iter().enumerate() {
            let r = estimators::diameter_persistence(
                &self.flow,
                &gamma,
                horizon,
                &curve,
                c.save_every,
                c.n_replicas,
                self.seed(&format!("persistence/{i}")),
            )?;
            t.push(vec![
                fmt_f64(horizon),
                fmt_f64(r.fraction.value),
                fmt_f64(r.fraction.std_error),
                r.drops.to_string(),
                r.fraction.n_replicas.to_string(),
                r.unresolved.to_string(),
            ]);
            results.push(r);
        }
        self.write("persistence.csv", &t)?;
        if results.len() >= 2 {
            let (a, b) = (&results[0].fraction, &results[results.len() - 1].fraction);
            let excess = b.value - (a.value + 2.0 * a.std_error);
            self.check("persistence", "drop_fraction_trend", excess, 0.0, excess <= 0.0);
        }
        Ok(())
    }

    fn support(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.support.clone().expect("checked");
        let k_hat = self.k_hat()?;
        let params = SupportParams {
            horizons: c.horizons.clone(),
            grid_points: c.grid_points,
            net: NetParams {
                directions: c.directions,
                levels: c.levels,
                cap: c.net_cap,
            },
            eps_tol: c.eps_tol,
            poly_verts: c.poly_verts,
            dt: c.dt,
            n_rep: c.n_replicas,
        };
        let x_sample = estimators::unit_segment_sample(c.sample_points);
        let rep = estimators::support_experiment(&self.flow, &x_sample, k_hat, &params, self.seed("support"))?;
        let mut t = Table::new(&["T", "replica", "d_upper", "d_lower", "d_H", "K_hat"]);
        for r in &rep.rows {
            t.push(vec![
                fmt_f64(r.horizon),
                r.replica.to_string(),
                fmt_f64(r.d_upper),
                fmt_f64(r.d_lower),
                fmt_f64(r.d_h),
                fmt_f64(r.k_hat),
            ]);
        }
        self.write("support_report.csv", &t)?;
        let mut s = Table::new(&[
            "T",
            "d_H_median",
            "d_H_q1",
            "d_H_q3",
            "d_upper_median",
            "d_upper_q1",
            "d_upper_q3",
            "d_lower_median",
            "d_lower_q1",
            "d_lower_q3",
            "net_samples",
            "net_enumerated",
        ]);
        for m in &rep.summaries {
            let mut row = vec![fmt_f64(m.horizon)];
            for sp in [m.d_h, m.d_upper, m.d_lower] {
                row.extend([fmt_f64(sp.median), fmt_f64(sp.q1), fmt_f64(sp.q3)]);
            }
            row.push(rep.net.samples.to_string());
            row.push(bool_str(rep.net.enumerated));
            s.push(row);
        }
        self.write("support_summary.csv", &s)?;
        if rep.summaries.len() >= 2 {
            let worst = rep
                .summaries
                .windows(2)
                .map(|w| w[1].d_h.median - w[0].d_h.median)
                .fold(f64::NEG_INFINITY, f64::max);
            self.check("support", "median_d_h_step", worst, 0.0, worst < 0.0);
        }
        Ok(())
    }

    fn scaling(&mut self) -> Result<(), RunError> {
        let c = self.cfg.sim.scaling.clone().expect("checked");
        let params = self.hitting_params()?;
        let rep = estimators::scaling_check(
            &self.flow,
            c.r,
            &c.distances,
            &params,
            c.n_replicas,
            self.seed("scaling"),
        )?;
        let mut t = Table::new(&[
            "r", "K_base", "K_scaled", "ratio", "ratio_se", "mu1_base", "mu1_scaled", "mu1_ratio",
        ]);
        t.push(vec![
            fmt_f64(rep.r),
            fmt_f64(rep.k_base),
            fmt_f64(rep.k_scaled),
            fmt_f64(rep.ratio),
            fmt_f64(rep.ratio_se),
            fmt_f64(rep.mu1_base),
            fmt_f64(rep.mu1_scaled),
            fmt_f64(rep.mu1_scaled / rep.mu1_base),
        ]);
        self.write("scaling.csv", &t)?;
        let z = (rep.ratio - 1.0).abs() / rep.ratio_se;
        self.check("scaling", "speed_ratio_z", z, 2.0, z <= 2.0 || rep.ratio == 1.0);
        Ok(())
    }

    fn dispatch(&mut self, exp: Experiment) -> Result<(), RunError> {
        match exp {
            Experiment::CovCheck => self.cov_check(),
            Experiment::Diffusivity => self.diffusivity(),
            Experiment::Lyapunov => self.lyapunov(),
            Experiment::StableNorm => self.stable_norm().map(|_| ()),
            Experiment::Shape => self.shape(),
            Experiment::Persistence => self.persistence(),
            Experiment::Support => self.support(),
            Experiment::Scaling => self.scaling(),
            Experiment::Suite => unreachable!("expanded by run"),
        }
    }
}

/// Largest `|x_i − mean of the others| / SE` over a set of estimates.
pub fn isotropy_max_z(estimates: &[EstimateResult]) -> f64 {
    let n = estimates.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let others: Vec<&EstimateResult> = (0..n).filter(|&j| j != i).map(|j| &estimates[j]).collect();
        let m = others.len() as f64;
        let mean = others.iter().map(|e| e.value).sum::<f64>() / m;
        let se = (others.iter().map(|e| e.std_error.powi(2)).sum::<f64>()).sqrt() / m;
        let pooled = EstimateResult::new(mean, se, 0);
        worst = worst.max(estimates[i].z_distance(&pooled));
    }
    worst
}

/// Run `exp` (or every configured experiment for `suite`) into `out`.
///
/// `manifest.json` is written before any table and rewritten with wall
/// times at the end.
pub fn run(cfg: &RunConfig, exp: Experiment, out: &Path, strict: bool) -> Result<RunSummary, RunError> {
    cfg.check_blocks(exp)?;
    let modes = cfg.model.build().map_err(ConfigError::Model)?;
    let members = if exp == Experiment::Suite {
        cfg.suite_members()
    } else {
        vec![exp]
    };
    if members.iter().any(|&e| e != Experiment::CovCheck) {
        let defect = modes.isotropy_defect(64, 64, derive_seed(cfg.master_seed, "isotropy"))?;
        if defect >= MAX_ISOTROPY_DEFECT {
            return Err(ConfigError::Invalid {
                key: "model.angular_order".into(),
                reason: format!("isotropy defect {defect:.4} is not below {MAX_ISOTROPY_DEFECT}"),
            }
            .into());
        }
    }
    let mut ctx = Context {
        cfg,
        flow: Flow::new(&modes),
        modes,
        out: OutputDir::create(out)?,
        summary: RunSummary::default(),
        k_hat: None,
    };
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        experiment: exp.name().to_string(),
        config: cfg.clone(),
        moduli: ctx.modes.moduli(),
        model_notes: MODEL_NOTES.to_vec(),
        wall_time: BTreeMap::new(),
    };
    ctx.out.write_manifest(&manifest)?;
    for e in members {
        let start = Instant::now();
        ctx.dispatch(e)?;
        manifest.wall_time.insert(e.name().to_string(), start.elapsed().as_secs_f64());
    }
    if exp == Experiment::Suite {
        let mut t = Table::new(&["experiment", "check", "value", "threshold", "pass"]);
        for c in &ctx.summary.checks {
            t.push(vec![
                c.experiment.into(),
                c.name.into(),
                fmt_f64(c.value),
                fmt_f64(c.threshold),
                bool_str(c.pass),
            ]);
        }
        ctx.write("suite.csv", &t)?;
    }
    ctx.out.write_manifest(&manifest)?;
    ctx.summary.k_hat = ctx.k_hat.or(cfg.k_hat);
    if strict && !ctx.summary.warnings.is_empty() {
        return Err(RunError::Unreliable(ctx.summary.warnings));
    }
    Ok(ctx.summary)
}
