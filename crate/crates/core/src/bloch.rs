//! Momentum-space description of the extended SSH bath.
//!
//! The Bloch Hamiltonian is `H(k) = d_x(k) σx + d_y(k) σy + d_z σz` with
//!
//! ```text
//! d_x(k) = J1' + (J1 + J3') cos k + J3 cos 2k
//! d_y(k) = (J1 - J3') sin k + J3 sin 2k
//! d_z    = omega_delta
//! ```
//!
//! so that the sublattice off-diagonal element is
//! `H_ab(k) = d_x - i d_y = J1' + J3' e^{ik} + J1 e^{-ik} + J3 e^{-2ik}`.
//! All energies are measured in units of the nearest-neighbour hopping and
//! relative to the cavity reference `omega_c`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{k_grid, Real};

/// Bath parameters `(J1, J1', J3, J3', omega_c, omega_delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams<T> {
    pub j1: T,
    pub j1p: T,
    pub j3: T,
    pub j3p: T,
    #[serde(default)]
    pub omega_c: T,
    #[serde(default)]
    pub omega_delta: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(j1: T, j1p: T, j3: T, j3p: T) -> Self {
        Self {
            j1,
            j1p,
            j3,
            j3p,
            omega_c: T::zero(),
            omega_delta: T::zero(),
        }
    }

    /// `J1 = J1' = 1` with the given third-neighbour pair `(J3', J3)`.
    pub fn extended_ssh(j3p: T, j3: T) -> Self {
        Self::new(T::one(), T::one(), j3, j3p)
    }

    /// Uniform chain `J1 = J1' = j` with staggered on-site offset `±omega_delta`.
    pub fn staggered(j: T, omega_delta: T) -> Self {
        Self::new(j, j, T::zero(), T::zero()).with_omega_delta(omega_delta)
    }

    pub fn with_omega_delta(mut self, omega_delta: T) -> Self {
        self.omega_delta = omega_delta;
        self
    }

    /// Exchanges primed and unprimed hoppings, i.e. the roles of A and B.
    pub fn swapped(&self) -> Self {
        Self {
            j1: self.j1p,
            j1p: self.j1,
            j3: self.j3p,
            j3p: self.j3,
            ..*self
        }
    }

    pub fn is_chiral(&self) -> bool {
        self.omega_delta == T::zero()
    }

    /// Largest hopping magnitude, used to scale tolerances.
    pub fn hopping_scale(&self) -> T {
        let s = self
            .j1
            .abs()
            .max(self.j1p.abs())
            .max(self.j3.abs())
            .max(self.j3p.abs());
        if s > T::zero() {
            s
        } else {
            T::one()
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.j1,
            self.j1p,
            self.j3,
            self.j3p,
            self.omega_c,
            self.omega_delta,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    /// Sublattice off-diagonal Bloch element `h(k) = d_x(k) - i d_y(k)`.
    pub fn offdiag(&self, k: T) -> Complex<T> {
        let v = bloch_vector(self, k);
        Complex::new(v.dx, -v.dy)
    }

    /// `d/dk` of `omega(k)^2 / 2`; shares its sign with the group velocity.
    fn half_dispersion_sq_slope(&self, k: T) -> T {
        let two = T::lit(2.0);
        let (s1, c1) = (k.sin(), k.cos());
        let (s2, c2) = ((two * k).sin(), (two * k).cos());
        let dx = self.j1p + (self.j1 + self.j3p) * c1 + self.j3 * c2;
        let dy = (self.j1 - self.j3p) * s1 + self.j3 * s2;
        let ddx = -(self.j1 + self.j3p) * s1 - two * self.j3 * s2;
        let ddy = (self.j1 - self.j3p) * c1 + two * self.j3 * c2;
        dx * ddx + dy * ddy
    }
}

/// Pauli decomposition of the Bloch Hamiltonian at one momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector<T> {
    pub k: T,
    pub dx: T,
    pub dy: T,
    pub dz: T,
}

impl<T: Real> BlochVector<T> {
    pub fn norm(&self) -> T {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz).sqrt()
    }
}

pub fn bloch_vector<T: Real>(params: &ModelParams<T>, k: T) -> BlochVector<T> {
    let two = T::lit(2.0);
    BlochVector {
        k,
        dx: params.j1p + (params.j1 + params.j3p) * k.cos() + params.j3 * (two * k).cos(),
        dy: (params.j1 - params.j3p) * k.sin() + params.j3 * (two * k).sin(),
        dz: params.omega_delta,
    }
}

/// Upper-band energy `omega(k) = |d(k)|`; the lower band is `-omega(k)`.
pub fn dispersion<T: Real>(params: &ModelParams<T>, k: T) -> T {
    bloch_vector(params, k).norm()
}

/// A stationary point of `omega(k)` on the Brillouin zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint<T> {
    pub k: T,
    pub energy: T,
    pub is_maximum: bool,
}

/// Stationary points of `omega(k)`, located by sign changes of the slope on a
/// staggered grid and refined by bisection.
pub fn critical_points<T: Real>(params: &ModelParams<T>, n_k: usize) -> Vec<CriticalPoint<T>> {
    let n = n_k.max(8);
    let half = T::lit(0.5);
    let ks: Vec<T> = k_grid(n, half).collect();
    let slopes: Vec<T> = ks
        .iter()
        .map(|&k| params.half_dispersion_sq_slope(k))
        .collect();
    let mut out = Vec::new();
    for m in 0..n {
        let next = (m + 1) % n;
        let (s0, s1) = (slopes[m], slopes[next]);
        if (s0 > T::zero()) == (s1 > T::zero()) {
            continue;
        }
        let mut lo = ks[m];
        let mut hi = if next == 0 {
            ks[0] + T::two_pi()
        } else {
            ks[next]
        };
        let lo_positive = s0 > T::zero();
        let stop = T::lit(1e-13).max(T::eps() * T::lit(16.0));
        for _ in 0..200 {
            if hi - lo <= stop {
                break;
            }
            let mid = (lo + hi) * half;
            if (params.half_dispersion_sq_slope(mid) > T::zero()) == lo_positive {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut k = (lo + hi) * half;
        if k >= T::pi() {
            k -= T::two_pi();
        }
        out.push(CriticalPoint {
            k,
            energy: dispersion(params, k),
            is_maximum: lo_positive,
        });
    }
    out
}

/// Band summary on a uniform momentum grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScan<T> {
    pub k_grid: Vec<T>,
    pub omega_upper: Vec<T>,
    pub omega_lower: Vec<T>,
    /// Width of the middle gap, `2 min_k omega(k)`.
    pub gap_width: T,
    /// Bottom of the upper band (`min omega`).
    pub band_min: T,
    /// Top of the upper band (`max omega`).
    pub band_max: T,
    /// In-band Van Hove energies of the upper band, ascending. The lower band
    /// carries the mirrored values.
    pub vhs_energies: Vec<T>,
}

impl<T: Real> BandScan<T> {
    pub fn in_band(&self, energy: T) -> bool {
        let e = energy.abs();
        e >= self.band_min && e <= self.band_max
    }
}

pub fn band_scan<T: Real>(params: &ModelParams<T>, n_k: usize) -> Result<BandScan<T>> {
    if n_k < 1024 {
        return Err(Error::InvalidInput(format!(
            "band scan needs n_k >= 1024, got {n_k}"
        )));
    }
    if !params.is_finite() {
        return Err(Error::InvalidInput("non-finite model parameters".into()));
    }
    let k: Vec<T> = k_grid(n_k, T::zero()).collect();
    let upper: Vec<T> = k.iter().map(|&k| dispersion(params, k)).collect();
    let lower = upper.iter().map(|&w| -w).collect();

    let crit = critical_points(params, n_k);
    let grid_min = upper
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    let grid_max = upper.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let band_min = crit
        .iter()
        .map(|c| c.energy)
        .fold(grid_min, |a, b| a.min(b));
    let band_max = crit
        .iter()
        .map(|c| c.energy)
        .fold(grid_max, |a, b| a.max(b));

    let scale = params.hopping_scale().max(params.omega_delta.abs());
    let edge_tol = T::lit(1e-8) * scale;
    let mut vhs: Vec<T> = crit
        .iter()
        .map(|c| c.energy)
        .filter(|&e| (e - band_min).abs() > edge_tol && (band_max - e).abs() > edge_tol)
        .collect();
    vhs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vhs.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-7) * scale);

    Ok(BandScan {
        k_grid: k,
        omega_upper: upper,
        omega_lower: lower,
        gap_width: T::lit(2.0) * band_min,
        band_min,
        band_max,
        vhs_energies: vhs,
    })
}

/// Smallest upper-band energy, refined at the stationary points.
pub fn min_dispersion<T: Real>(params: &ModelParams<T>, n_k: usize) -> T {
    let grid = k_grid(n_k.max(8), T::zero())
        .map(|k| dispersion(params, k))
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    critical_points(params, n_k)
        .iter()
        .map(|c| c.energy)
        .fold(grid, |a, b| a.min(b))
}

/// Number of times `(d_x, d_y)` circles the origin across the Brillouin zone.
///
/// Accumulates branch-wrapped increments of `atan2(d_y, d_x)`, which is exact
/// for a gapped loop once every increment is below `pi`.
pub fn winding_number<T: Real>(params: &ModelParams<T>, n_k: usize) -> Result<i32> {
    if n_k < 1024 {
        return Err(Error::InvalidInput(format!(
            "winding number needs n_k >= 1024, got {n_k}"
        )));
    }
    if !params.is_chiral() {
        return Err(Error::ChiralityBroken {
            omega_delta: params.omega_delta.to_f64_lossy(),
        });
    }
    let tolerance = T::lit(1e-9) * params.hopping_scale();
    let min_gap = min_dispersion(params, n_k);
    if min_gap <= tolerance {
        return Err(Error::GaplessModel {
            min_gap: min_gap.to_f64_lossy(),
            tolerance: tolerance.to_f64_lossy(),
        });
    }
    let angle = |k: T| {
        let v = bloch_vector(params, k);
        v.dy.atan2(v.dx)
    };
    let two_pi = T::two_pi();
    let mut prev = angle(-T::pi());
    let mut total = T::zero();
    for m in 1..=n_k {
        let k = -T::pi() + two_pi * T::from_count(m) / T::from_count(n_k);
        let a = angle(k);
        let mut step = a - prev;
        while step > T::pi() {
            step -= two_pi;
        }
        while step <= -T::pi() {
            step += two_pi;
        }
        total += step;
        prev = a;
    }
    let turns = total / two_pi;
    let rounded = turns.round();
    let residual = (turns - rounded).abs();
    let limit = T::lit(1e-6).max(T::eps() * T::from_count(n_k) * T::lit(64.0));
    if residual >= limit {
        return Err(Error::GaplessModel {
            min_gap: min_gap.to_f64_lossy(),
            tolerance: tolerance.to_f64_lossy(),
        });
    }
    Ok(rounded.to_f64_lossy() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix2;
    use std::f64::consts::PI;

    fn p(j1: f64, j1p: f64, j3: f64, j3p: f64) -> ModelParams<f64> {
        ModelParams::new(j1, j1p, j3, j3p)
    }

    /// Brute-force 2x2 Bloch matrix assembled from the real-space hopping pattern.
    fn bloch_matrix_from_hoppings(m: &ModelParams<f64>, k: f64) -> Matrix2<num_complex::Complex64> {
        use num_complex::Complex64 as C;
        let e = |n: f64| C::from_polar(1.0, n * k);
        let hab = C::from(m.j1p) + e(1.0) * m.j3p + e(-1.0) * m.j1 + e(-2.0) * m.j3;
        Matrix2::new(
            C::from(m.omega_delta),
            hab,
            hab.conj(),
            C::from(-m.omega_delta),
        )
    }

    #[test]
    fn bloch_vector_examples() {
        let v = bloch_vector(&p(1.0, 1.0, 0.0, 0.0), 0.0);
        assert_eq!((v.dx, v.dy, v.dz), (2.0, 0.0, 0.0));
        let v = bloch_vector(&p(1.0, 1.0, 0.8, 0.5), 0.0);
        assert_abs_diff_eq!(v.dx, 3.3, epsilon = 1e-15);
        assert_abs_diff_eq!(v.dy, 0.0, epsilon = 1e-15);
        let v = bloch_vector(&p(1.0, 1.0, 0.8, 0.5), PI / 2.0);
        assert_abs_diff_eq!(v.dx, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(v.dy, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dispersion_examples() {
        assert_abs_diff_eq!(dispersion(&p(1.0, 1.0, 0.0, 0.0), PI), 0.0, epsilon = 1e-15);
        let stag = ModelParams::staggered(1.0, 0.1);
        assert_abs_diff_eq!(dispersion(&stag, PI), 0.1, epsilon = 1e-15);
        let scan = band_scan(&p(1.0, 1.0, 0.8, 0.5), 4096).unwrap();
        assert!((scan.gap_width - 0.2).abs() < 0.02, "{}", scan.gap_width);
    }

    #[test]
    fn eigenvalues_match_two_by_two_diagonalization() {
        for m in [
            p(1.0, 1.0, 0.8, 0.5),
            p(1.0, 1.0, 2.0, 4.0),
            p(1.0, 0.4, -0.7, 1.3),
        ] {
            for i in 0..64 {
                let k = -PI + 2.0 * PI * i as f64 / 64.0;
                let h = bloch_matrix_from_hoppings(&m, k);
                // Hermitian 2x2 with zero trace: eigenvalues are ±sqrt(-det).
                let det = (h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)]).re;
                let e = (-det).sqrt();
                assert_abs_diff_eq!(e, dispersion(&m, k), epsilon = 1e-12);
                assert_abs_diff_eq!(e, dispersion(&m, -k), epsilon = 1e-12);
                let hab = m.offdiag(k);
                assert_abs_diff_eq!(hab.re, h[(0, 1)].re, epsilon = 1e-12);
                assert_abs_diff_eq!(hab.im, h[(0, 1)].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn winding_of_cited_phases() {
        let cases = [
            ((0.5, 0.8), 2),
            ((0.2661, 0.5), 0),
            ((2.0, 0.5), -1),
            ((0.5, -0.76), 1),
        ];
        for ((j3p, j3), w) in cases {
            let m = ModelParams::extended_ssh(j3p, j3);
            assert_eq!(winding_number(&m, 1024).unwrap(), w);
            assert_eq!(winding_number(&m, 2048).unwrap(), w);
        }
    }

    #[test]
    fn swapping_hoppings_mirrors_phase_labels() {
        // W=2 <-> W=-1 and W=0 <-> W=1 under J <-> J'.
        for (j3p, j3) in [(0.5, 0.8), (0.2661, 0.5), (2.0, 0.5), (0.5, -0.76)] {
            let m = ModelParams::extended_ssh(j3p, j3);
            let w = winding_number(&m, 4096).unwrap();
            let ws = winding_number(&m.swapped(), 4096).unwrap();
            assert_eq!(ws, 1 - w, "({j3p}, {j3})");
        }
    }

    #[test]
    fn winding_errors() {
        let stag = ModelParams::staggered(1.0, 0.1);
        assert!(matches!(
            winding_number(&stag, 4096),
            Err(Error::ChiralityBroken { .. })
        ));
        let gapless = p(1.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            winding_number(&gapless, 4096),
            Err(Error::GaplessModel { .. })
        ));
        // J3 = J3' closes the gap at k = pi.
        let gapless = ModelParams::extended_ssh(0.7, 0.7);
        assert!(matches!(
            winding_number(&gapless, 4096),
            Err(Error::GaplessModel { .. })
        ));
        assert!(winding_number(&p(1.0, 2.0, 0.0, 0.0), 100).is_err());
    }

    #[test]
    fn band_scan_van_hove() {
        let scan = band_scan(&p(1.0, 1.0, 2.0, 4.0), 4096).unwrap();
        assert!(
            scan.vhs_energies.iter().any(|&e| (e - 5.03).abs() < 0.05),
            "{:?}",
            scan.vhs_energies
        );
        assert_abs_diff_eq!(scan.band_max, 8.0, epsilon = 1e-10);

        let ssh_like = band_scan(&p(1.0, 1.0, 0.0, 0.3), 4096).unwrap();
        assert!(
            ssh_like.vhs_energies.is_empty(),
            "{:?}",
            ssh_like.vhs_energies
        );

        let stag = band_scan(&ModelParams::staggered(1.0, 0.1), 4096).unwrap();
        assert_abs_diff_eq!(stag.gap_width, 0.2, epsilon = 1e-12);
        for (u, l) in stag.omega_upper.iter().zip(&stag.omega_lower) {
            assert_eq!(*u, -*l);
        }
    }

    #[test]
    fn single_precision_instantiation() {
        let m = ModelParams::<f32>::extended_ssh(0.5, 0.8);
        assert_eq!(winding_number(&m, 1024).unwrap(), 2);
        let v = bloch_vector(&m, std::f32::consts::FRAC_PI_2);
        assert!((v.dx - 0.2).abs() < 1e-6);
    }
}
