//! Isotropic covariance models realised as finite cosine mode sums.
//!
//! A [`SpectralModel`] fixes a radial spectrum (wavenumbers with energy
//! weights), an angular resolution `L` and the split between potential
//! (`e ∥ k`) and solenoidal (`e ⟂ k`) polarisation. [`SpectralModel::build`]
//! turns it into a [`ModeSet`] whose covariance tensor is
//!
//! ```text
//! b(x) = Σ_j σ²_j e_j e_jᵀ cos⟨k_j, x⟩,     b(0) = Id.
//! ```
//!
//! The grid of directions is `θ_ℓ = 2πℓ/L`, so `b` is exactly invariant under
//! rotation by `2π/L` and only approximately isotropic otherwise.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::replica_rng;
use crate::{Mat2, Vec2};

/// Number of probe directions used for the directional spread of the moduli.
pub const MODULI_PROBE_DIRECTIONS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralModel {
    /// Strictly increasing, positive (1/length).
    pub wavenumbers: Vec<f64>,
    /// Energy fractions, summing to one.
    pub weights: Vec<f64>,
    /// Number of grid directions; even and at least 4.
    pub angular_order: usize,
    /// Share of energy carried by solenoidal modes, in `[0, 1]`.
    pub solenoidal_fraction: f64,
}

impl SpectralModel {
    /// Single-wavenumber model.
    pub fn single(wavenumber: f64, angular_order: usize, solenoidal_fraction: f64) -> Self {
        Self {
            wavenumbers: vec![wavenumber],
            weights: vec![1.0],
            angular_order,
            solenoidal_fraction,
        }
    }

    /// Model used by the hitting, shape, persistence and support experiments:
    /// one wavenumber `1/4`, `L = 32`, purely solenoidal.
    pub fn default_experiment() -> Self {
        Self::single(0.25, 32, 1.0)
    }

    /// `n` wavenumbers log-spaced over `[k_min, k_max]` with equal weights.
    pub fn log_spaced(
        k_min: f64,
        k_max: f64,
        n: usize,
        angular_order: usize,
        solenoidal_fraction: f64,
    ) -> Self {
        let wavenumbers = if n == 1 {
            vec![k_min]
        } else {
            let ratio = (k_max / k_min).ln() / (n - 1) as f64;
            (0..n).map(|i| k_min * (ratio * i as f64).exp()).collect()
        };
        Self {
            wavenumbers,
            weights: vec![1.0 / n as f64; n],
            angular_order,
            solenoidal_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.wavenumbers.is_empty() {
            return bad("wavenumbers: empty spectrum".into());
        }
        if self.wavenumbers.len() != self.weights.len() {
            return bad(format!(
                "weights: {} weights for {} wavenumbers",
                self.weights.len(),
                self.wavenumbers.len()
            ));
        }
        if self.wavenumbers.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return bad("wavenumbers: must be finite and positive".into());
        }
        if self.wavenumbers.windows(2).any(|w| w[1] <= w[0]) {
            return bad("wavenumbers: must be strictly increasing".into());
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights: must be finite and nonnegative".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights: sum to {total}, expected 1"));
        }
        if !self.angular_order.is_multiple_of(2) || self.angular_order < 4 {
            return bad(format!(
                "angular_order: {} is not an even integer >= 4",
                self.angular_order
            ));
        }
        if !(0.0..=1.0).contains(&self.solenoidal_fraction) {
            return bad(format!(
                "solenoidal_fraction: {} outside [0, 1]",
                self.solenoidal_fraction
            ));
        }
        Ok(())
    }

    /// Expand into Fourier modes with `Σ σ² e eᵀ = Id`.
    ///
    /// Over a full grid of `L ≥ 4` directions `Σ_ℓ e_ℓ e_ℓᵀ = (L/2)·Id` for
    /// either polarisation class, hence `σ² = 2·w·share / L`. Modes at `θ + π`
    /// are emitted as exact negations of their partner at `θ`; the flow
    /// integrator relies on this to pair them.
    pub fn build(&self) -> Result<ModeSet> {
        self.validate()?;
        let l = self.angular_order;
        let half = l / 2;
        let s = self.solenoidal_fraction;
        let mut modes = Vec::with_capacity(2 * l * self.wavenumbers.len());
        for (&kappa, &w) in self.wavenumbers.iter().zip(&self.weights) {
            let pot = 2.0 * w * (1.0 - s) / l as f64;
            let sol = 2.0 * w * s / l as f64;
            let base: Vec<(Vec2, Vec2)> = (0..half)
                .map(|i| {
                    let theta = 2.0 * PI * i as f64 / l as f64;
                    let (sin, cos) = theta.sin_cos();
                    (Vec2::new(cos, sin), Vec2::new(-sin, cos))
                })
                .collect();
            for i in 0..l {
                let sign = if i < half { 1.0 } else { -1.0 };
                let (dir, perp) = base[i % half];
                let k = dir * (sign * kappa);
                if pot > 0.0 {
                    modes.push(Mode {
                        k,
                        e: dir * sign,
                        sigma2: pot,
                    });
                }
                if sol > 0.0 {
                    modes.push(Mode {
                        k,
                        e: perp * sign,
                        sigma2: sol,
                    });
                }
            }
        }
        Ok(ModeSet {
            modes,
            angular_order: l,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: Vec2,
    /// Unit polarisation, parallel or perpendicular to `k`.
    pub e: Vec2,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub angular_order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub beta_l: f64,
    pub beta_n: f64,
    /// `max{β_L, β_N}`.
    pub kappa: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Largest deviation of direction-dependent `(β_L, β_N)` from the `e₁` values.
    pub isotropy_defect: f64,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn min_wavenumber(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.k.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_wavenumber(&self) -> f64 {
        self.modes.iter().map(|m| m.k.norm()).fold(0.0, f64::max)
    }

    /// `b(x) = Σ σ² e eᵀ cos⟨k, x⟩`.
    pub fn covariance_at(&self, x: Vec2) -> Mat2 {
        self.modes.iter().fold(Mat2::zeros(), |acc, m| {
            acc + m.e * m.e.transpose() * (m.sigma2 * m.k.dot(&x).cos())
        })
    }

    /// `(B_L(r), B_N(r))`, the diagonal of `b(r·e₁)`.
    pub fn longitudinal_normal(&self, r: f64) -> (f64, f64) {
        let b = self.covariance_at(Vec2::new(r, 0.0));
        (b[(0, 0)], b[(1, 1)])
    }

    /// `(β_L, β_N)` measured along the unit direction `u`.
    pub fn betas_along(&self, u: Vec2) -> (f64, f64) {
        let v = Vec2::new(-u.y, u.x);
        self.modes.iter().fold((0.0, 0.0), |(bl, bn), m| {
            let ku2 = m.k.dot(&u).powi(2);
            (
                bl + m.sigma2 * m.e.dot(&u).powi(2) * ku2,
                bn + m.sigma2 * m.e.dot(&v).powi(2) * ku2,
            )
        })
    }

    /// Curvature moduli along `e₁` and the Lyapunov exponents they imply in
    /// the plane: `μ₁ = ½(β_N − β_L)`, `μ₂ = −β_L`.
    pub fn moduli(&self) -> CovarianceSummary {
        let (beta_l, beta_n) = self.betas_along(Vec2::x());
        let isotropy_defect = (0..MODULI_PROBE_DIRECTIONS)
            .map(|d| {
                let a = 2.0 * PI * d as f64 / MODULI_PROBE_DIRECTIONS as f64;
                let (bl, bn) = self.betas_along(Vec2::new(a.cos(), a.sin()));
                (bl - beta_l).abs().max((bn - beta_n).abs())
            })
            .fold(0.0, f64::max);
        CovarianceSummary {
            beta_l,
            beta_n,
            kappa: beta_l.max(beta_n),
            mu1: 0.5 * (beta_n - beta_l),
            mu2: 0.5 * (0.0 * beta_n - 2.0 * beta_l),
            isotropy_defect,
        }
    }

    /// Largest value of `2·max{1 − B_L(r), 1 − B_N(r)} − κ r²` over the grid.
    /// A nonpositive result means the quadratic bound holds at every point.
    pub fn check_kappa_bound(&self, r_grid: &[f64]) -> f64 {
        let kappa = self.moduli().kappa;
        r_grid
            .iter()
            .map(|&r| {
                let (bl, bn) = self.longitudinal_normal(r);
                2.0 * (1.0 - bl).max(1.0 - bn) - kappa * r * r
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup ‖Oᵀ b(Ox) O − b(x)‖₂` over the given rotation angles and points.
    pub fn rotation_defect(&self, angles: &[f64], points: &[Vec2]) -> f64 {
        let mut worst: f64 = 0.0;
        for &a in angles {
            let o = rotation(a);
            for &x in points {
                let d = o.transpose() * self.covariance_at(o * x) * o - self.covariance_at(x);
                worst = worst.max(symmetric_spectral_norm(&d));
            }
        }
        worst
    }

    /// Sampled isotropy defect: random rotation angles and random probe points
    /// uniform in the disc of radius `2π / k_min` (one longest wavelength).
    pub fn isotropy_defect(&self, n_rotations: usize, n_points: usize, seed: u64) -> Result<f64> {
        if n_rotations == 0 {
            return Err(crate::error::invalid("n_rotations", "must be >= 1"));
        }
        if n_points == 0 {
            return Err(crate::error::invalid("n_points", "must be >= 1"));
        }
        let mut rng = replica_rng(seed, 0);
        let radius = 2.0 * PI / self.min_wavenumber();
        let angles: Vec<f64> = (0..n_rotations)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let points: Vec<Vec2> = (0..n_points)
            .map(|_| {
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        Ok(self.rotation_defect(&angles, &points))
    }

    /// Same model with every wavevector multiplied by `r`, i.e. `b̃(x) = b(r x)`.
    pub fn scaled(&self, r: f64) -> ModeSet {
        ModeSet {
            modes: self
                .modes
                .iter()
                .map(|m| Mode {
                    k: m.k * r,
                    ..*m
                })
                .collect(),
            angular_order: self.angular_order,
        }
    }
}

pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Spectral norm of a symmetric 2×2 matrix.
pub fn symmetric_spectral_norm(m: &Mat2) -> f64 {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    mean.abs() + half_diff.hypot(off)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solenoidal_l4() -> ModeSet {
        SpectralModel::single(1.0, 4, 1.0).build().unwrap()
    }

    fn balanced_l4() -> ModeSet {
        SpectralModel::single(1.0, 4, 0.5).build().unwrap()
    }

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn solenoidal_l4_modes_and_covariance() {
        let m = solenoidal_l4();
        assert_eq!(m.len(), 4);
        assert!(m.modes.iter().all(|md| md.sigma2 == 0.5));
        for r in [0.0, 0.3, 1.0, 2.5, 7.0] {
            let b = m.covariance_at(Vec2::new(r, 0.0));
            assert!(close(&b, &Mat2::new(1.0, 0.0, 0.0, r.cos()), 1e-14));
        }
    }

    #[test]
    fn balanced_l4_modes_and_covariance() {
        let m = balanced_l4();
        assert_eq!(m.len(), 8);
        assert!(m.modes.iter().all(|md| md.sigma2 == 0.25));
        for r in [0.0, 0.3, 1.0, 2.5] {
            let (bl, bn) = m.longitudinal_normal(r);
            let want = 0.5 * (1.0 + r.cos());
            assert!((bl - want).abs() < 1e-14 && (bn - want).abs() < 1e-14);
        }
    }

    #[test]
    fn polarisation_is_unit_and_aligned() {
        let m = SpectralModel::log_spaced(0.5, 5.0, 3, 12, 0.3).build().unwrap();
        for md in &m.modes {
            assert!((md.e.norm() - 1.0).abs() < 1e-12);
            let k = md.k / md.k.norm();
            let par = k.perp(&md.e).abs() < 1e-12;
            let perp = k.dot(&md.e).abs() < 1e-12;
            assert!(par || perp);
        }
        assert!(close(&m.covariance_at(Vec2::zeros()), &Mat2::identity(), 1e-12));
    }

    #[test]
    fn rejects_bad_models() {
        assert!(SpectralModel::single(1.0, 2, 1.0).build().is_err());
        assert!(SpectralModel::single(1.0, 6, 1.5).build().is_err());
        let empty = SpectralModel {
            wavenumbers: vec![],
            weights: vec![],
            angular_order: 8,
            solenoidal_fraction: 1.0,
        };
        assert!(empty.build().is_err());
        let unsorted = SpectralModel {
            wavenumbers: vec![2.0, 1.0],
            weights: vec![0.5, 0.5],
            angular_order: 8,
            solenoidal_fraction: 1.0,
        };
        assert!(unsorted.build().is_err());
        let odd = SpectralModel::single(1.0, 7, 1.0);
        assert!(matches!(odd.validate(), Err(Error::InvalidModel(msg)) if msg.contains("angular_order")));
    }

    #[test]
    fn moduli_of_l4_examples() {
        let s = solenoidal_l4().moduli();
        assert!(s.beta_l.abs() < 1e-15);
        assert!((s.beta_n - 1.0).abs() < 1e-15);
        assert!((s.mu1 - 0.5).abs() < 1e-15);
        assert!(s.mu2.abs() < 1e-15);
        assert_eq!(s.kappa, s.beta_n);

        let b = balanced_l4().moduli();
        assert!((b.beta_l - 0.5).abs() < 1e-15);
        assert!((b.beta_n - 0.5).abs() < 1e-15);
        assert!(b.mu1.abs() < 1e-15);

        // mu1 > 0 iff beta_n > beta_l
        assert!(s.mu1 > 0.0 && s.beta_n > s.beta_l);
        assert!(!(b.mu1 > 0.0) && !(b.beta_n > b.beta_l));
    }

    #[test]
    fn exponent_substitution() {
        // beta_L = 1, beta_N = 3 -> mu1 = 1, mu2 = -1
        let (bl, bn) = (1.0_f64, 3.0_f64);
        let mu = |i: f64| 0.5 * ((2.0 - i) * bn - i * bl);
        assert_eq!(mu(1.0), 1.0);
        assert_eq!(mu(2.0), -1.0);
    }

    #[test]
    fn dense_grid_has_isotropic_moduli() {
        let s = SpectralModel::single(1.0, 32, 1.0).build().unwrap().moduli();
        // isotropic solenoidal field: beta_N = 3 beta_L = 3 k^2 / 4
        assert!((s.beta_l - 0.25).abs() < 1e-12);
        assert!((s.beta_n - 0.75).abs() < 1e-12);
        assert!(s.isotropy_defect < 1e-12);
        assert!(solenoidal_l4().moduli().isotropy_defect > 0.1);
    }

    #[test]
    fn kappa_bound_examples() {
        let m = solenoidal_l4();
        assert!(m.check_kappa_bound(&[0.1, 1.0, 10.0]) <= 0.0);
        // slack -> 0 at the origin
        assert!(m.check_kappa_bound(&[1e-4]).abs() < 1e-12);
        let b = balanced_l4();
        for r in [0.1, 1.0, 3.0, 10.0] {
            let (bl, _) = b.longitudinal_normal(r);
            assert!(2.0 * (1.0 - bl) <= 0.5 * r * r + 1e-15);
        }
        assert!(b.check_kappa_bound(&[0.1, 1.0, 10.0]) <= 0.0);
    }

    #[test]
    fn rotation_defect_vanishes_on_symmetry_angles() {
        let m = SpectralModel::log_spaced(0.3, 3.0, 4, 8, 0.7).build().unwrap();
        let angles: Vec<f64> = (0..8).map(|i| 2.0 * PI * i as f64 / 8.0).collect();
        let points: Vec<Vec2> = (0..20)
            .map(|i| Vec2::new((i as f64 * 0.7).sin() * 5.0, (i as f64 * 1.3).cos() * 5.0))
            .collect();
        assert!(m.rotation_defect(&angles, &points) <= 1e-10);
    }

    #[test]
    fn l4_is_not_isotropic_under_quarter_pi() {
        let m = solenoidal_l4();
        let d = m.rotation_defect(&[PI / 4.0], &[Vec2::x()]);
        assert!(d > 1e-3, "defect {d}");
    }

    #[test]
    fn sampled_defect_shrinks_with_angular_order() {
        let defects: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&l| {
                SpectralModel::single(1.0, l, 1.0)
                    .build()
                    .unwrap()
                    .isotropy_defect(16, 64, 11)
                    .unwrap()
            })
            .collect();
        assert!(defects[1] <= defects[0] && defects[2] <= defects[1], "{defects:?}");
        assert!(defects[2] < 0.05);
        assert!(solenoidal_l4().isotropy_defect(0, 1, 0).is_err());
    }

    #[test]
    fn scaled_model_betas_scale_quadratically() {
        let m = SpectralModel::log_spaced(0.5, 5.0, 8, 32, 1.0).build().unwrap();
        let (a, b) = (m.moduli(), m.scaled(0.5).moduli());
        assert!((b.mu1 - 0.25 * a.mu1).abs() < 1e-12);
        assert!((b.beta_n - 0.25 * a.beta_n).abs() < 1e-12);
    }
}
