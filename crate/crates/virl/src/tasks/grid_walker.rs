//! Planar walker whose reward forms a grid of `2^d` equal modes.
//!
//! The walker takes `d` unit-length steps; step `i` has absolute angle `x_i`,
//! so positions follow `h_i = h_{i-1} + (cos x_i, sin x_i)` from the origin.
//! Vertical lines sit at multiples of `line_spacing`, and line `i` carries
//! narrow Gaussians at the reachable heights `offset * (2k - i)` for
//! `k = 0..=i`, where `offset = sqrt(1 - spacing^2)`. A step's likelihood is
//! the logsumexp of its y-coordinate against the heights on its line, which
//! makes every angle vector in `{-acos(spacing), +acos(spacing)}^d` a global
//! mode of equal value. Only the y-coordinates are scored; the x-coordinates
//! are fixed by the unit-step geometry.

use ndarray::{Array1, Array2, ArrayView1};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::math;
use crate::scalar::Scalar;

pub const DEFAULT_LINE_SPACING: f64 = 0.8;
pub const DEFAULT_WAYPOINT_VARIANCE: f64 = 1e-3;
/// Standard deviation of the expert sampler's Gaussian prior over angles.
/// Narrow enough to exclude the mirror modes near `+-(pi - acos(spacing))`
/// (the reward constrains only y-coordinates, so those have equal mass),
/// broad enough to cover the evaluation box.
pub const EXPERT_PRIOR_STD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct GridWalkerTask<S: Scalar = f64> {
    d: usize,
    line_spacing: S,
    waypoint_variance: S,
    /// `sqrt(1 - spacing^2)`; vertical offset of one step at a mode.
    y_offset: S,
    /// `acos(spacing)`; magnitude of every mode-center coordinate.
    mode_angle: S,
}

impl<S: Scalar> GridWalkerTask<S> {
    pub fn new(d: usize, line_spacing: S, waypoint_variance: S) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "walker needs at least one step"));
        }
        // A unit step must advance x by `spacing`, so spacing < 1 or the
        // vertical offset sqrt(1 - spacing^2) vanishes or goes imaginary.
        if !(line_spacing > S::zero() && line_spacing < S::one()) {
            return Err(Error::invalid(
                "line_spacing",
                "must lie strictly in (0, 1)",
            ));
        }
        if !(waypoint_variance > S::zero()) || !waypoint_variance.is_finite() {
            return Err(Error::invalid(
                "waypoint_variance",
                "must be positive and finite",
            ));
        }
        let y_offset = (S::one() - line_spacing * line_spacing).sqrt();
        let mode_angle = line_spacing.acos();
        Ok(GridWalkerTask {
            d,
            line_spacing,
            waypoint_variance,
            y_offset,
            mode_angle,
        })
    }

    pub fn with_defaults(d: usize) -> Result<Self> {
        Self::new(
            d,
            S::of_f64(DEFAULT_LINE_SPACING),
            S::of_f64(DEFAULT_WAYPOINT_VARIANCE),
        )
    }

    pub fn steps(&self) -> usize {
        self.d
    }

    pub fn line_spacing(&self) -> S {
        self.line_spacing
    }

    pub fn waypoint_variance(&self) -> S {
        self.waypoint_variance
    }

    pub fn mode_angle(&self) -> S {
        self.mode_angle
    }

    /// The `d + 1` walker positions for an angle vector, starting at the origin.
    pub fn positions(&self, x: &ArrayView1<S>) -> Result<Array2<S>> {
        self.check_dim(x.len())?;
        let mut out = Array2::zeros((self.d + 1, 2));
        let mut px = S::zero();
        let mut py = S::zero();
        for (i, &angle) in x.iter().enumerate() {
            px += angle.cos();
            py += angle.sin();
            out[[i + 1, 0]] = px;
            out[[i + 1, 1]] = py;
        }
        Ok(out)
    }

    /// All `2^d` mode centers, one row per sign pattern: row `r` sets
    /// coordinate `j` to `+mode_angle` when bit `j` of `r` is set.
    pub fn mode_centers(&self) -> Array2<S> {
        let n = 1usize << self.d;
        let mut out = Array2::zeros((n, self.d));
        for r in 0..n {
            for j in 0..self.d {
                out[[r, j]] = if (r >> j) & 1 == 1 {
                    self.mode_angle
                } else {
                    -self.mode_angle
                };
            }
        }
        out
    }

    /// Log-density shared by every mode center: each of the `d` steps hits a
    /// waypoint exactly, contributing the peak of one line Gaussian.
    pub fn mode_log_density(&self) -> S {
        let half = S::of_f64(0.5);
        let two_pi = S::of_f64(2.0) * S::PI();
        -half * S::of_usize(self.d) * (two_pi * self.waypoint_variance).ln()
    }

    /// Half-width of the evaluation box `[-1.2, 1.2] * acos(spacing)` per axis.
    pub fn box_halfwidth(&self) -> S {
        S::of_f64(1.2) * self.mode_angle
    }

    /// Gaussian prior over angles used to draw expert demonstrations.
    pub fn expert_prior(&self) -> Gaussian<S> {
        let sd = S::of_f64(EXPERT_PRIOR_STD);
        Gaussian::isotropic(Array1::zeros(self.d), sd * sd).expect("positive variance")
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got,
            });
        }
        Ok(())
    }
}

impl<S: Scalar> Density<S> for GridWalkerTask<S> {
    fn dim(&self) -> usize {
        self.d
    }

    /// Unnormalized: sums, over lines, the logsumexp of the step's
    /// y-coordinate against every admissible height on that line.
    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        self.check_dim(x.len())?;
        let half = S::of_f64(0.5);
        let two_pi = S::of_f64(2.0) * S::PI();
        let inv_two_var = half / self.waypoint_variance;
        let line_norm = -half * (two_pi * self.waypoint_variance).ln();

        let mut total = S::zero();
        let mut y = S::zero();
        let mut exponents: Vec<S> = Vec::with_capacity(self.d + 1);
        for (i, &angle) in x.iter().enumerate() {
            y += angle.sin();
            let line = i + 1;
            exponents.clear();
            for k in 0..=line {
                let lattice = S::of_f64((2 * k) as f64 - line as f64);
                let diff = y - self.y_offset * lattice;
                exponents.push(-diff * diff * inv_two_var);
            }
            total += line_norm + math::logsumexp(&exponents)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::array;
    use proptest::prelude::*;

    fn walker(d: usize) -> GridWalkerTask {
        GridWalkerTask::with_defaults(d).unwrap()
    }

    #[test]
    fn zero_angles_walk_along_the_x_axis() {
        let t = walker(3);
        let pos = t.positions(&array![0.0, 0.0, 0.0].view()).unwrap();
        for i in 0..=3 {
            assert!((pos[[i, 0]] - i as f64).abs() < 1e-15);
            assert!(pos[[i, 1]].abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_steps_straight_up() {
        let t = walker(1);
        let pos = t
            .positions(&array![std::f64::consts::FRAC_PI_2].view())
            .unwrap();
        assert!(pos[[1, 0]].abs() < 1e-15);
        assert!((pos[[1, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alternating_mode_angles_touch_the_grid() {
        let t = walker(2);
        let a = 0.8f64.acos();
        let pos = t.positions(&array![a, -a].view()).unwrap();
        assert!((pos[[1, 0]] - 0.8).abs() < 1e-12);
        assert!((pos[[1, 1]] - 0.6).abs() < 1e-12);
        assert!((pos[[2, 0]] - 1.6).abs() < 1e-12);
        assert!(pos[[2, 1]].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_construction_and_dimension() {
        assert!(GridWalkerTask::<f64>::new(0, 0.8, 1e-3).is_err());
        assert!(GridWalkerTask::<f64>::new(3, 0.0, 1e-3).is_err());
        assert!(GridWalkerTask::<f64>::new(3, 1.0, 1e-3).is_err());
        assert!(GridWalkerTask::<f64>::new(3, 1.5, 1e-3).is_err());
        assert!(GridWalkerTask::<f64>::new(3, 0.8, 0.0).is_err());
        let t = walker(2);
        assert!(t.positions(&array![0.0].view()).is_err());
        assert!(t.log_pdf(&array![0.0, 0.0, 0.0].view()).is_err());
    }

    #[test]
    fn every_mode_center_attains_the_shared_maximum() {
        let t = walker(3);
        let centers = t.mode_centers();
        assert_eq!(centers.nrows(), 8);
        let expect = t.mode_log_density();
        // d * peak of N(0; 0, 1e-3).
        assert!((expect - 3.0 * 2.5349391062863961).abs() < 1e-12);
        for row in centers.rows() {
            let v = t.log_pdf(&row).unwrap();
            assert!((v - expect).abs() < 1e-9, "center value {v} vs {expect}");
        }
        assert_eq!(walker(5).mode_centers().nrows(), 32);
    }

    #[test]
    fn mode_centers_are_local_maxima() {
        let t = walker(2);
        let centers = t.mode_centers();
        let peak = t.mode_log_density();
        for row in centers.rows() {
            for j in 0..2 {
                for delta in [-0.05, 0.05] {
                    let mut x = row.to_owned();
                    x[j] += delta;
                    assert!(t.log_pdf(&x.view()).unwrap() < peak);
                }
            }
        }
    }

    #[test]
    fn straight_walk_scores_far_below_the_modes() {
        let t = walker(2);
        let v = t.log_pdf(&array![0.0, 0.0].view()).unwrap();
        assert!(v < t.mode_log_density() - 100.0);
    }

    #[test]
    fn expert_prior_and_box_geometry() {
        let t = walker(4);
        let prior = t.expert_prior();
        assert_eq!(prior.dim(), 4);
        assert!((prior.chol()[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((t.box_halfwidth() - 1.2 * 0.8f64.acos()).abs() < 1e-15);
    }

    #[test]
    fn sign_flip_leaves_the_density_unchanged() {
        let t = walker(4);
        let mut rng = RngStream::new(31);
        for _ in 0..20 {
            let x = rng.normal_vector::<f64>(4);
            let flipped = x.mapv(|v| -v);
            let a = t.log_pdf(&x.view()).unwrap();
            let b = t.log_pdf(&flipped.view()).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn steps_have_unit_length(
            angles in proptest::collection::vec(-3.2f64..3.2, 1..6)
        ) {
            let t = walker(angles.len());
            let x = Array1::from_vec(angles);
            let pos = t.positions(&x.view()).unwrap();
            for i in 1..pos.nrows() {
                let dx = pos[[i, 0]] - pos[[i - 1, 0]];
                let dy = pos[[i, 1]] - pos[[i - 1, 1]];
                let len = (dx * dx + dy * dy).sqrt();
                prop_assert!((len - 1.0).abs() < 1e-12);
            }
        }
    }
}
