//! Correlation geometry of the three cell-level errors.
//!
//! The plug-in variance of `sqrt(n) * (x1 - 2 x2 + x3)` under correlations
//! `(rho1, rho2, rho3)` is
//!
//! ```text
//! s^2(rho) = s1^2 + 4 s2^2 + s3^2 - 4 s1 s2 rho3 + 2 s1 s3 rho2 - 4 s2 s3 rho1
//! ```
//!
//! where `rho3` couples cells 1 and 2, `rho2` cells 1 and 3 and `rho1` cells
//! 2 and 3. Admissible correlations form the open elliptope
//! `1 - rho1^2 - rho2^2 - rho3^2 + 2 rho1 rho2 rho3 > 0`. The infimum of the
//! (linear) objective over it is attained on the boundary, which is searched
//! numerically here and cross-checked against a closed form in the tests.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ledger::StudySummary;
use crate::parallel::Execution;

/// Default accuracy of [`exact_infimum_sq`] on the squared scale.
pub const DEFAULT_INFIMUM_TOL: f64 = 1e-6;

/// Slack allowed on a negative radicand before it is treated as a bug.
pub const RADICAND_EPS: f64 = 1e-12;

const GRID_STEPS: usize = 200;
const REFINE_BUDGET: usize = 200_000;

/// `1 - rho1^2 - rho2^2 - rho3^2 + 2 rho1 rho2 rho3`, the determinant of the
/// correlation matrix.
pub fn elliptope_det(rho: [f64; 3]) -> f64 {
    let [a, b, c] = rho;
    1.0 - a * a - b * b - c * c + 2.0 * a * b * c
}

/// A correlation triple strictly inside the elliptope: a valid model point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationTriple {
    rho: [f64; 3],
}

impl CorrelationTriple {
    pub const ZERO: CorrelationTriple = CorrelationTriple { rho: [0.0; 3] };

    pub fn new(rho1: f64, rho2: f64, rho3: f64) -> Result<Self> {
        let point = SearchPoint::new([rho1, rho2, rho3]);
        if point.is_interior() {
            Ok(Self { rho: point.rho })
        } else {
            Err(Error::Domain(format!(
                "({rho1}, {rho2}, {rho3}) is not an interior correlation triple (det = {})",
                point.det()
            )))
        }
    }

    pub fn rho(&self) -> [f64; 3] {
        self.rho
    }

    pub fn rho1(&self) -> f64 {
        self.rho[0]
    }

    pub fn rho2(&self) -> f64 {
        self.rho[1]
    }

    pub fn rho3(&self) -> f64 {
        self.rho[2]
    }

    pub fn is_zero(&self) -> bool {
        self.rho == [0.0; 3]
    }
}

/// Any triple of reals. The infimum search runs over the closed elliptope,
/// so it works with these instead of [`CorrelationTriple`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchPoint {
    pub rho: [f64; 3],
}

impl SearchPoint {
    pub fn new(rho: [f64; 3]) -> Self {
        Self { rho }
    }

    pub fn det(&self) -> f64 {
        elliptope_det(self.rho)
    }

    pub fn is_interior(&self) -> bool {
        self.rho.iter().all(|r| r.abs() < 1.0) && self.det() > 0.0
    }

    pub fn in_closure(&self) -> bool {
        self.rho.iter().all(|r| r.abs() <= 1.0) && self.det() >= -RADICAND_EPS
    }
}

/// `s^2(rho)` without any admissibility check.
pub fn variance_sq(rho: [f64; 3], sds: [f64; 3]) -> f64 {
    let [s1, s2, s3] = sds;
    let [r1, r2, r3] = rho;
    s0_sq(sds) - 4.0 * s1 * s2 * r3 + 2.0 * s1 * s3 * r2 - 4.0 * s2 * s3 * r1
}

/// `s^2(0, 0, 0) = s1^2 + 4 s2^2 + s3^2`.
pub fn s0_sq(sds: [f64; 3]) -> f64 {
    let [s1, s2, s3] = sds;
    s1 * s1 + 4.0 * s2 * s2 + s3 * s3
}

fn check_sds(sds: [f64; 3]) -> Result<()> {
    if sds.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("sds must be positive, got {sds:?}")))
    }
}

fn checked_sqrt(radicand: f64, scale: f64) -> Result<f64> {
    if radicand < -RADICAND_EPS * scale.max(1.0) {
        return Err(Error::Consistency(format!(
            "negative variance radicand {radicand}"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// `s(rho)`, the plug-in standard deviation of `sqrt(n) z`.
pub fn combined_sd(rho: &CorrelationTriple, sds: [f64; 3]) -> Result<f64> {
    check_sds(sds)?;
    checked_sqrt(variance_sq(rho.rho, sds), s0_sq(sds))
}

/// The computable bound `min{(2 s2 - (s1 + s3))^2, (2 s2 - sqrt(s1^2 + s3^2))^2}`.
pub fn paper_lower_bound_sq(sds: [f64; 3]) -> f64 {
    let [s1, s2, s3] = sds;
    let a = 2.0 * s2 - (s1 + s3);
    let b = 2.0 * s2 - s1.hypot(s3);
    (a * a).min(b * b)
}

/// Closed form of the infimum: `s^2(rho)` is the squared length of
/// `s1 e1 - 2 s2 e2 + s3 e3` for unit vectors with the given correlations,
/// so its minimum is the polygon gap `max(0, 2 max(w) - sum(w))^2` with
/// `w = (s1, 2 s2, s3)`.
pub fn closed_form_infimum_sq(sds: [f64; 3]) -> f64 {
    let w = [sds[0], 2.0 * sds[1], sds[2]];
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = w.iter().sum();
    let gap = (2.0 * max - sum).max(0.0);
    gap * gap
}

/// Result of the numeric infimum search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfimumSearch {
    pub value: f64,
    pub argmin: SearchPoint,
    pub iterations: usize,
}

/// Boundary point for given `(rho1, rho2)`; `upper` selects the `+` root.
fn boundary_rho3(r1: f64, r2: f64, upper: bool) -> f64 {
    let root = ((1.0 - r1 * r1) * (1.0 - r2 * r2)).max(0.0).sqrt();
    let r3 = if upper {
        r1 * r2 + root
    } else {
        r1 * r2 - root
    };
    r3.clamp(-1.0, 1.0)
}

/// Objective on the boundary, minimized over the two sign branches. Ties go
/// to the upper branch.
fn boundary_objective(r1: f64, r2: f64, sds: [f64; 3]) -> (f64, bool) {
    let hi = variance_sq([r1, r2, boundary_rho3(r1, r2, true)], sds);
    let lo = variance_sq([r1, r2, boundary_rho3(r1, r2, false)], sds);
    if lo < hi {
        (lo, false)
    } else {
        (hi, true)
    }
}

fn angle_point(a: f64, b: f64) -> [f64; 3] {
    [a.cos(), b.cos(), (a - b).cos()]
}

const MAX_ESCAPES: usize = 16;

/// In angle coordinates the objective is
/// `s0^2 - P cos(a - b) + Q cos b - R cos a` with `P = 4 s1 s2`,
/// `Q = 2 s1 s3`, `R = 4 s2 s3`. If its Hessian at `(a, b)` has a negative
/// eigenvalue, returns the first point along that eigenvector (either sign,
/// halving steps from 0.5) that lowers the objective.
fn saddle_escape(a: f64, b: f64, current: f64, sds: [f64; 3]) -> Option<(f64, f64, f64)> {
    let [s1, s2, s3] = sds;
    let (p, q, r) = (4.0 * s1 * s2, 2.0 * s1 * s3, 4.0 * s2 * s3);
    let cab = (a - b).cos();
    let haa = p * cab + r * a.cos();
    let hbb = p * cab - q * b.cos();
    let hab = -p * cab;
    let mid = 0.5 * (haa + hbb);
    let rad = (0.25 * (haa - hbb).powi(2) + hab * hab).sqrt();
    let lambda = mid - rad;
    if lambda >= -1e-12 * (p + q + r) {
        return None;
    }
    let (v1, v2) = if (haa - lambda).abs() > (hbb - lambda).abs() {
        (hab, lambda - haa)
    } else {
        (lambda - hbb, hab)
    };
    let norm = v1.hypot(v2);
    if norm == 0.0 {
        return None;
    }
    let (v1, v2) = (v1 / norm, v2 / norm);
    let mut t = 0.5;
    while t > 1e-9 {
        for sign in [1.0, -1.0] {
            let (na, nb) = (a + sign * t * v1, b + sign * t * v2);
            let value = variance_sq(angle_point(na, nb), sds);
            if value < current {
                return Some((na, nb, value));
            }
        }
        t *= 0.5;
    }
    None
}

fn grid_coord(i: usize) -> f64 {
    (i as f64 - (GRID_STEPS / 2) as f64) / (GRID_STEPS / 2) as f64
}

#[derive(Clone, Copy)]
struct Cell {
    value: f64,
    i: usize,
    j: usize,
    upper: bool,
}

impl Cell {
    /// Strictly better: lower value, then lexicographically smaller
    /// `(i, j, branch)` with the upper branch ordered first.
    fn beats(&self, other: &Cell) -> bool {
        (self.value, self.i, self.j, !self.upper) < (other.value, other.i, other.j, !other.upper)
    }
}

/// Numeric infimum of `s^2(rho)` over the closed elliptope, with its
/// location.
///
/// Searches the boundary `rho3 = rho1 rho2 +- sqrt((1 - rho1^2)(1 - rho2^2))`
/// on a 0.01 grid in `(rho1, rho2)`, then refines the best cell by a
/// compass search in the angles `rho1 = cos a`, `rho2 = cos b`,
/// `rho3 = cos(a - b)`. The step doubles after a successful poll and halves
/// after a failed one, down to `min(1e-8, tol / 100)`.
pub fn minimize_variance(sds: [f64; 3], tol: f64, exec: Execution) -> Result<InfimumSearch> {
    check_sds(sds)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }

    let rows = exec.map_indexed(GRID_STEPS + 1, |i| {
        let r1 = grid_coord(i);
        let mut best: Option<Cell> = None;
        for j in 0..=GRID_STEPS {
            let (value, upper) = boundary_objective(r1, grid_coord(j), sds);
            let cell = Cell { value, i, j, upper };
            if best.is_none_or(|b| cell.beats(&b)) {
                best = Some(cell);
            }
        }
        best.expect("grid rows are nonempty")
    });
    let start = rows
        .into_iter()
        .reduce(|a, b| if b.beats(&a) { b } else { a })
        .expect("grid is nonempty");

    // Refine in angle coordinates: (rho1, rho2, rho3) = (cos a, cos b, cos(a - b))
    // traces both boundary branches smoothly, including near the corners
    // where the square-root form has unbounded slope.
    let (r1, r2) = (grid_coord(start.i), grid_coord(start.j));
    let mut a = r1.acos();
    let mut b = if start.upper { r2.acos() } else { -r2.acos() };
    let mut best = start.value;
    let mut step = 1.0 / (GRID_STEPS / 2) as f64;
    let min_step = (tol / 100.0).min(1e-8);
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    let mut iterations = 0;
    let mut escapes = 0;
    loop {
        while step >= min_step {
            iterations += 1;
            if iterations > REFINE_BUDGET {
                return Err(Error::NonConvergence {
                    iterations: REFINE_BUDGET,
                    best,
                });
            }
            let mut improved = false;
            for (da, db) in DIRS {
                let (ca, cb) = (a + da * step, b + db * step);
                let value = variance_sq(angle_point(ca, cb), sds);
                if value < best {
                    best = value;
                    a = ca;
                    b = cb;
                    improved = true;
                }
            }
            step = if improved {
                (step * 2.0).min(0.5)
            } else {
                step * 0.5
            };
        }
        // The poll stalls at critical points. Collinear configurations are
        // often saddles whose descent cone is narrower than the poll
        // directions, so leave along the negative-curvature direction.
        match saddle_escape(a, b, best, sds) {
            Some((na, nb, value)) if escapes < MAX_ESCAPES => {
                escapes += 1;
                a = na;
                b = nb;
                best = value;
                step = 1.0 / (GRID_STEPS / 2) as f64;
            }
            _ => break,
        }
    }

    let argmin = SearchPoint::new(angle_point(a, b));
    let s0 = s0_sq(sds);
    if best < -RADICAND_EPS * s0.max(1.0) {
        return Err(Error::Consistency(format!("negative infimum {best}")));
    }
    let value = best.max(0.0);
    // The reduced-variance constraint s(rho) <= s(0,0,0) must hold at the
    // minimizer; it is inactive because rho = 0 is itself feasible.
    if value > s0 * (1.0 + 1e-12) {
        return Err(Error::Consistency(format!(
            "minimizer violates s(rho) <= s(0): {value} > {s0}"
        )));
    }
    Ok(InfimumSearch {
        value,
        argmin,
        iterations,
    })
}

/// The infimum `s_L^2` of `s^2(rho)` over admissible correlations with
/// `s(rho) <= s(0,0,0)`.
pub fn exact_infimum_sq(sds: [f64; 3], tol: f64) -> Result<f64> {
    Ok(minimize_variance(sds, tol, Execution::default())?.value)
}

/// Derived variance scalars for one study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceProfile {
    pub s0_sq: f64,
    pub paper_lower_sq: f64,
    pub exact_lower_sq: f64,
    pub z: f64,
    pub nz_sq: f64,
}

pub fn variance_profile(study: &StudySummary) -> Result<VarianceProfile> {
    variance_profile_with(study, DEFAULT_INFIMUM_TOL, Execution::default())
}

pub fn variance_profile_with(
    study: &StudySummary,
    tol: f64,
    exec: Execution,
) -> Result<VarianceProfile> {
    study.check()?;
    let z = study.contrast();
    Ok(VarianceProfile {
        s0_sq: s0_sq(study.sds),
        paper_lower_sq: paper_lower_bound_sq(study.sds),
        exact_lower_sq: minimize_variance(study.sds, tol, exec)?.value,
        z,
        nz_sq: study.n * z * z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn det_examples() {
        assert_eq!(elliptope_det([0.0, 0.0, 0.0]), 1.0);
        assert_eq!(elliptope_det([1.0, 1.0, 1.0]), 0.0);
        assert!(close(elliptope_det([0.9, 0.9, 0.9]), 0.028, 1e-12));
    }

    #[test]
    fn triple_rejects_boundary_and_outside() {
        assert!(CorrelationTriple::new(1.0, 0.0, 0.0).is_err());
        assert!(CorrelationTriple::new(0.9, -0.9, 0.9).is_err());
        assert!(CorrelationTriple::new(0.5, 0.5, 0.5).is_ok());
        assert!(SearchPoint::new([1.0, 1.0, 1.0]).in_closure());
        assert!(!SearchPoint::new([1.0, 1.0, 1.0]).is_interior());
    }

    #[test]
    fn combined_sd_at_independence() {
        let s = combined_sd(&CorrelationTriple::ZERO, [1.21, 0.72, 0.68]).unwrap();
        assert!(close(s, 4.0001f64.sqrt(), 1e-12));
        assert!(close(s, 2.000025, 1e-6));
        let s = combined_sd(&CorrelationTriple::ZERO, [1.0, 1.0, 1.0]).unwrap();
        assert!(close(s, 6f64.sqrt(), 1e-12));
        assert!(combined_sd(&CorrelationTriple::ZERO, [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn combined_sd_near_all_ones_corner() {
        let sds: [f64; 3] = [1.24, 1.09, 1.53];
        let target = (2.0 * sds[1] - sds[0] - sds[2]).abs();
        for delta in [1e-3, 1e-5, 1e-7] {
            let r = 1.0 - delta;
            let rho = CorrelationTriple::new(r, r, r).unwrap();
            let s = combined_sd(&rho, sds).unwrap();
            assert!(
                close(s, target, 20.0 * delta.sqrt()),
                "delta {delta}: {s} vs {target}"
            );
        }
        assert!(close(
            variance_sq([1.0, 1.0, 1.0], sds),
            target * target,
            1e-12
        ));
    }

    #[test]
    fn paper_bound_examples() {
        assert!(close(
            paper_lower_bound_sq([1.07, 1.21, 0.82]),
            0.2809,
            1e-12
        ));
        let b = paper_lower_bound_sq([1.24, 1.09, 1.53]);
        assert!(close(b, 0.0444, 1e-4));
        assert!(close(b, 0.044356248292, 1e-11));
        assert_eq!(paper_lower_bound_sq([1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn infimum_examples() {
        let sl = exact_infimum_sq([1.07, 1.21, 0.82], DEFAULT_INFIMUM_TOL).unwrap();
        assert!(close(sl, 0.2809, 1e-6), "{sl}");
        let sl = exact_infimum_sq([1.24, 1.09, 1.53], DEFAULT_INFIMUM_TOL).unwrap();
        assert!(close(sl, 0.0, 1e-6), "{sl}");
        let sl = exact_infimum_sq([1.0, 1.0, 1.0], DEFAULT_INFIMUM_TOL).unwrap();
        assert!(close(sl, 0.0, 1e-12), "{sl}");
    }

    #[test]
    fn infimum_rejects_bad_input() {
        assert!(exact_infimum_sq([1.0, -1.0, 1.0], 1e-6).is_err());
        assert!(exact_infimum_sq([1.0, 1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn argmin_lies_on_the_boundary() {
        let search = minimize_variance([1.07, 1.21, 0.82], 1e-6, Execution::Sequential).unwrap();
        assert!(search.argmin.in_closure());
        assert!(search.argmin.det().abs() < 1e-9);
        assert!(close(
            variance_sq(search.argmin.rho, [1.07, 1.21, 0.82]),
            search.value,
            1e-12
        ));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        for sds in [[1.07, 1.21, 0.82], [0.3, 4.1, 2.2], [2.0, 0.4, 1.9]] {
            let a = minimize_variance(sds, 1e-6, Execution::Sequential).unwrap();
            let b = minimize_variance(sds, 1e-6, Execution::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn profile_of_table_one_rows() {
        let row1 = StudySummary::new("1", 20.0, [2.47, 3.04, 3.68], [1.21, 0.72, 0.68]);
        let p = variance_profile(&row1).unwrap();
        assert!(close(p.z, 0.07, 1e-12));
        assert!(close(p.nz_sq, 0.098, 1e-12));
        assert!(close(p.s0_sq, 4.0001, 1e-12));
        assert!(p.exact_lower_sq <= p.paper_lower_sq && p.paper_lower_sq <= p.s0_sq);

        let row8 = StudySummary::new("8", 20.0, [2.87, 3.83, 4.79], [1.24, 1.09, 1.53]);
        let p = variance_profile(&row8).unwrap();
        assert!(close(p.z, 0.0, 1e-12));
        assert!(close(p.nz_sq, 0.0, 1e-20));
        assert!(close(p.exact_lower_sq, 0.0, 1e-6));
    }

    #[test]
    fn constant_means_have_zero_contrast() {
        for a in [-3.5, 0.0, 1e3] {
            let s = StudySummary::new("c", 10.0, [a, a, a], [1.0, 2.0, 3.0]);
            assert_eq!(s.contrast(), 0.0);
        }
    }
}
