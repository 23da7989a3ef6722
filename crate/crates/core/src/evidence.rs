//! Evidential value of a study in favour of correlated (fabricated) errors
//! versus independent errors, plus the contrast statistics built on the same
//! quantities.
//!
//! The value is the ratio of the plug-in Gaussian density of the contrast
//! `z = x1 - 2 x2 + x3`, maximised over every admissible variance
//! `s^2 in [s_L^2, s0^2]`, to the density at independence (`s^2 = s0^2`).
//! Since `x -> x^{-1/2} exp(-n z^2 / 2x)` peaks at `x = n z^2`, the supremum
//! splits into three cases depending on where `n z^2` falls:
//!
//! * above `s0^2`: the value is 1;
//! * inside `[lower, s0^2]`: `(s0 / sqrt(nz^2)) exp(-1/2 + nz^2 / (2 s0^2))`;
//! * below `lower`: the density at `lower` divided by the density at `s0`.
//!
//! [`Mode::Paper`] uses the computable bound `ŝ_L^2` for `lower` and reports
//! an interval in the last case; [`Mode::Exact`] uses the numerically
//! located infimum `s_L^2` and always reports a point.

use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::geometry::{self, DEFAULT_INFIMUM_TOL};
use crate::ledger::StudySummary;
use crate::parallel::Execution;

/// A nonnegative quantity that may be unbounded. Used for evidential values,
/// their products and posterior odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Unbounded,
}

impl Bound {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Bound::Unbounded)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(*v),
            Bound::Unbounded => None,
        }
    }

    /// `f64` view; unbounded maps to `+inf`.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    fn scale(self, factor: f64) -> Bound {
        match self {
            Bound::Finite(v) => Bound::Finite(v * factor),
            Bound::Unbounded => Bound::Unbounded,
        }
    }
}

impl Mul for Bound {
    type Output = Bound;

    fn mul(self, rhs: Bound) -> Bound {
        match (self, rhs) {
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a * b),
            _ => Bound::Unbounded,
        }
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::Unbounded => f.write_str("∞"),
        }
    }
}

/// Finite values serialize as JSON numbers, unbounded as the string `"inf"`.
impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bound::Finite(v) => s.serialize_f64(*v),
            Bound::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound::Finite(v)),
            Raw::Text(t) if t == "inf" || t == "∞" => Ok(Bound::Unbounded),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad bound `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Paper,
    Exact,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Paper => "paper",
            Mode::Exact => "exact",
        })
    }
}

/// Where `n z^2` falls relative to the lower variance bound and `s0^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Case {
    Below,
    Middle,
    Above,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Below => "BELOW",
            Case::Middle => "MIDDLE",
            Case::Above => "ABOVE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidentialValue {
    pub lower: Bound,
    pub upper: Bound,
    pub case: Case,
    pub mode: Mode,
}

impl EvidentialValue {
    fn point(value: Bound, case: Case, mode: Mode) -> Self {
        Self {
            lower: value,
            upper: value,
            case,
            mode,
        }
    }

    pub fn is_point(&self) -> bool {
        self.lower == self.upper
    }

    /// The exceedance rule used for calibration: the lower bound must reach
    /// `v`.
    pub fn at_least(&self, v: f64) -> bool {
        self.lower.as_f64() >= v
    }
}

/// `sqrt(n / 2 pi) / s * exp(-n z^2 / (2 s^2))` at squared scale `s_sq`.
pub fn plugin_density(z: f64, n: f64, s_sq: f64) -> Result<f64> {
    if !(s_sq > 0.0) || !s_sq.is_finite() {
        return Err(Error::Domain(format!("s_sq must be positive, got {s_sq}")));
    }
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("n must be positive, got {n}")));
    }
    let norm = (n / (2.0 * std::f64::consts::PI)).sqrt() / s_sq.sqrt();
    Ok(norm * (-n * z * z / (2.0 * s_sq)).exp())
}

fn finite_or_max(v: f64) -> Bound {
    if v.is_finite() {
        Bound::Finite(v)
    } else {
        Bound::Finite(f64::MAX)
    }
}

/// Middle-case value: the density ratio with the variance placed at `n z^2`
/// itself; unbounded when `n z^2 = 0`.
pub fn middle_case_value(nz_sq: f64, s0_sq: f64) -> Bound {
    if nz_sq == 0.0 {
        return Bound::Unbounded;
    }
    let log = 0.5 * (s0_sq.ln() - nz_sq.ln()) - 0.5 + nz_sq / (2.0 * s0_sq);
    finite_or_max(log.exp())
}

/// Below-case value: the density ratio with the variance placed at
/// `lower_sq > 0`.
pub fn below_case_value(lower_sq: f64, nz_sq: f64, s0_sq: f64) -> Bound {
    let log = 0.5 * (s0_sq.ln() - lower_sq.ln()) - 0.5 * nz_sq * (1.0 / lower_sq - 1.0 / s0_sq);
    finite_or_max(log.exp())
}

/// Evaluates the three-case formula for given scalars. In paper mode
/// `lower_sq` is the computable bound, in exact mode the infimum.
pub fn evidential_value_from(nz_sq: f64, s0_sq: f64, lower_sq: f64, mode: Mode) -> EvidentialValue {
    if nz_sq > s0_sq {
        return EvidentialValue::point(Bound::Finite(1.0), Case::Above, mode);
    }
    if nz_sq >= lower_sq {
        return EvidentialValue::point(middle_case_value(nz_sq, s0_sq), Case::Middle, mode);
    }
    let at_lower = below_case_value(lower_sq, nz_sq, s0_sq);
    match mode {
        Mode::Paper => EvidentialValue {
            lower: at_lower,
            upper: middle_case_value(nz_sq, s0_sq),
            case: Case::Below,
            mode,
        },
        Mode::Exact => EvidentialValue::point(at_lower, Case::Below, mode),
    }
}

const SNAP_REL: f64 = 1e-9;

/// Evidential value with default solver settings.
pub fn evidential_value(study: &StudySummary, mode: Mode) -> Result<EvidentialValue> {
    evidential_value_with(study, mode, DEFAULT_INFIMUM_TOL, Execution::default())
}

/// Evidential value; `tol` and `exec` only matter in exact mode.
///
/// In exact mode a numeric infimum at or below `tol` is taken to be zero,
/// and the infimum is capped by the computable bound it can never exceed.
/// A numeric infimum within `SNAP_REL * s0^2` of that bound is the bound.
pub fn evidential_value_with(
    study: &StudySummary,
    mode: Mode,
    tol: f64,
    exec: Execution,
) -> Result<EvidentialValue> {
    study.check()?;
    let z = study.contrast();
    let nz_sq = study.n * z * z;
    let s0_sq = geometry::s0_sq(study.sds);
    let paper_sq = geometry::paper_lower_bound_sq(study.sds);
    let lower_sq = match mode {
        Mode::Paper => paper_sq,
        Mode::Exact => {
            let numeric = geometry::minimize_variance(study.sds, tol, exec)?.value;
            if numeric <= tol {
                0.0
            } else if paper_sq - numeric <= SNAP_REL * s0_sq {
                paper_sq
            } else {
                numeric
            }
        }
    };
    Ok(evidential_value_from(nz_sq, s0_sq, lower_sq, mode))
}

/// `Z_V = sqrt(n) z / sqrt(s1^2 + 4 s2^2 + s3^2)`.
pub fn z_v_statistic(study: &StudySummary) -> Result<f64> {
    study.check()?;
    Ok(study.n.sqrt() * study.contrast() / geometry::s0_sq(study.sds).sqrt())
}

/// `Z_C = sqrt(n) z / sqrt(2 (s1^2 + s2^2 + s3^2))`.
pub fn z_c_statistic(study: &StudySummary) -> Result<f64> {
    study.check()?;
    let pooled: f64 = study.sds.iter().map(|s| s * s).sum();
    Ok(study.n.sqrt() * study.contrast() / (2.0 * pooled).sqrt())
}

/// Largest `|Z_V|` for which the middle-case value still reaches `v`.
///
/// Solves `t^{-1/2} exp((t - 1) / 2) = v` for `t = n z^2 / s0^2 in (0, 1]`
/// by bisection on `ln t` and returns `sqrt(t)`.
pub fn threshold_ratio(v: f64) -> Result<f64> {
    if !(v > 1.0) || v.is_nan() {
        return Err(Error::Domain(format!("threshold v must exceed 1, got {v}")));
    }
    if v.is_infinite() {
        return Ok(0.0);
    }
    let log_v = v.ln();
    // g is decreasing in u = ln t, from +inf down to -ln v at u = 0.
    let g = |u: f64| -0.5 * u + 0.5 * u.exp_m1() - log_v;
    let (mut lo, mut hi) = (-2.0 * log_v - 1.0, 0.0);
    while hi - lo > 1e-13 * lo.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.25 * (lo + hi)).exp())
}

/// `P(|Z| <= threshold_ratio(v))` for standard normal `Z`, the null
/// probability that the value reaches `v`.
pub fn null_tail_probability(v: f64) -> Result<f64> {
    let r = threshold_ratio(v)?;
    Ok(erf(r / std::f64::consts::SQRT_2))
}

/// Fraction of `values` whose lower bound reaches `v`.
pub fn empirical_exceedance(values: &[EvidentialValue], v: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|e| e.at_least(v)).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEvidence {
    pub per_study: Vec<(String, EvidentialValue)>,
    pub product_lower: Bound,
    pub product_upper: Bound,
    pub prior_odds: f64,
    pub posterior_odds_lower: Bound,
    pub posterior_odds_upper: Bound,
}

/// Multiplies the values of independent studies (interval arithmetic, with
/// unbounded absorbing) and turns prior odds into posterior odds.
pub fn combine(values: &[(String, EvidentialValue)], prior_odds: f64) -> Result<CombinedEvidence> {
    if values.is_empty() {
        return Err(Error::Domain("cannot combine an empty list".into()));
    }
    if !(prior_odds > 0.0) || !prior_odds.is_finite() {
        return Err(Error::Domain(format!(
            "prior odds must be positive and finite, got {prior_odds}"
        )));
    }
    let (lower, upper) = values.iter().fold(
        (Bound::Finite(1.0), Bound::Finite(1.0)),
        |(lo, hi), (_, v)| (lo * v.lower, hi * v.upper),
    );
    Ok(CombinedEvidence {
        per_study: values.to_vec(),
        product_lower: lower,
        product_upper: upper,
        prior_odds,
        posterior_odds_lower: lower.scale(prior_odds),
        posterior_odds_upper: upper.scale(prior_odds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(n: f64, means: [f64; 3], sds: [f64; 3]) -> StudySummary {
        StudySummary::new("t", n, means, sds)
    }

    #[test]
    fn density_examples() {
        let d = plugin_density(0.0, 20.0, 1.0).unwrap();
        assert!((d - (20.0 / (2.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-14);
        assert!((d - 1.78412).abs() < 1e-5);
        let d = plugin_density(0.07, 20.0, 4.0001).unwrap();
        assert!((d - 0.881190212975).abs() < 1e-10);
        assert!(plugin_density(0.0, 20.0, 0.0).is_err());
        assert!(plugin_density(0.0, 20.0, -1.0).is_err());
    }

    #[test]
    fn density_normalizes() {
        // Simpson's rule over +-12 standard deviations.
        let (n, s_sq): (f64, f64) = (20.0, 4.0);
        let half_width = 12.0 * (s_sq / n).sqrt();
        let steps = 20_000;
        let h = 2.0 * half_width / steps as f64;
        let mut total = 0.0;
        for k in 0..=steps {
            let z = -half_width + k as f64 * h;
            let w = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += w * plugin_density(z, n, s_sq).unwrap();
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn table_one_row_one_middle() {
        let v = evidential_value(
            &study(20.0, [2.47, 3.04, 3.68], [1.21, 0.72, 0.68]),
            Mode::Paper,
        )
        .unwrap();
        assert_eq!(v.case, Case::Middle);
        assert!(v.is_point());
        assert!((v.lower.as_f64() - 3.92).abs() < 0.02);
    }

    #[test]
    fn table_one_row_six_interval_and_exact_point() {
        let s = study(20.0, [3.19, 4.01, 4.79], [1.07, 1.21, 0.82]);
        let v = evidential_value(&s, Mode::Paper).unwrap();
        assert_eq!(v.case, Case::Below);
        assert!((v.lower.as_f64() - 4.95).abs() < 0.02);
        assert!((v.upper.as_f64() - 9.41).abs() < 0.02);

        let e = evidential_value(&s, Mode::Exact).unwrap();
        assert!(e.is_point());
        assert_eq!(e.case, Case::Below);
        assert!((e.lower.as_f64() - 4.95).abs() < 0.02);
    }

    #[test]
    fn table_one_row_eight_is_unbounded_above() {
        let v = evidential_value(
            &study(20.0, [2.87, 3.83, 4.79], [1.24, 1.09, 1.53]),
            Mode::Paper,
        )
        .unwrap();
        assert_eq!(v.case, Case::Below);
        assert!((v.lower.as_f64() - 13.95).abs() < 0.02);
        assert_eq!(v.upper, Bound::Unbounded);
    }

    #[test]
    fn hunt_is_above() {
        let v = evidential_value(
            &study(25.0, [1.48, 1.04, 1.04], [0.82, 0.68, 0.68]),
            Mode::Paper,
        )
        .unwrap();
        assert_eq!(v.case, Case::Above);
        assert_eq!(v.lower, Bound::Finite(1.0));
        assert_eq!(v.upper, Bound::Finite(1.0));
    }

    #[test]
    fn equal_means_unit_sds_exact_is_unbounded() {
        let v =
            evidential_value(&study(20.0, [2.0, 2.0, 2.0], [1.0, 1.0, 1.0]), Mode::Exact).unwrap();
        assert_eq!(v.lower, Bound::Unbounded);
        assert_eq!(v.upper, Bound::Unbounded);
    }

    #[test]
    fn invalid_study_is_rejected() {
        assert!(evidential_value(&study(0.0, [1.0, 2.0, 3.0], [1.0; 3]), Mode::Paper).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn statistics_examples() {
        let row1 = study(20.0, [2.47, 3.04, 3.68], [1.21, 0.72, 0.68]);
        assert!((z_v_statistic(&row1).unwrap() - 0.156522801902).abs() < 1e-9);
        assert!((z_c_statistic(&row1).unwrap() - 0.141568780096).abs() < 1e-9);

        let flat = study(20.0, [1.0, 1.0, 1.0], [1.0, 2.0, 3.0]);
        assert_eq!(z_v_statistic(&flat).unwrap(), 0.0);
        assert_eq!(z_c_statistic(&flat).unwrap(), 0.0);

        let kanten = study(269.0 / 6.0, [3.29, 3.14, 2.66], [1.11, 0.94, 0.71]);
        assert!((z_v_statistic(&kanten).unwrap() + 0.962463848652).abs() < 1e-9);

        let equal = study(13.0, [0.3, 1.9, 2.2], [1.0, 1.0, 1.0]);
        assert!((z_v_statistic(&equal).unwrap() - z_c_statistic(&equal).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let r2 = threshold_ratio(2.0).unwrap();
        assert!((r2 - 0.3191).abs() < 5e-4);
        assert!((r2 - 0.319105673867).abs() < 1e-10);
        assert!((threshold_ratio(1.0 + 1e-9).unwrap() - 1.0).abs() < 1e-3);
        let r10 = threshold_ratio(10.0).unwrap();
        assert!((r10 - 0.060765147186).abs() < 1e-10);
        // forward check
        let t = r10 * r10;
        assert!((t.powf(-0.5) * ((t - 1.0) / 2.0).exp() - 10.0).abs() < 1e-8);
        let r_big = threshold_ratio(1e6).unwrap();
        let t = r_big * r_big;
        assert!((t.powf(-0.5) * ((t - 1.0) / 2.0).exp() / 1e6 - 1.0).abs() < 1e-9);
        assert!(threshold_ratio(1.0).is_err());
        assert!(threshold_ratio(0.5).is_err());
        assert!(threshold_ratio(f64::NAN).is_err());
    }

    #[test]
    fn tail_probability_examples() {
        assert!((null_tail_probability(2.0).unwrap() - 0.2504).abs() < 5e-4);
        assert!((null_tail_probability(1.0 + 1e-12).unwrap() - 0.682689492137).abs() < 1e-5);
        assert!((null_tail_probability(10.0).unwrap() - 0.048453752477).abs() < 1e-9);
        assert!(null_tail_probability(1e12).unwrap() < 1e-11);
    }

    #[test]
    fn combine_multiplies_and_absorbs_unbounded() {
        let two = EvidentialValue::point(Bound::Finite(2.0), Case::Middle, Mode::Paper);
        let twelve: Vec<_> = (0..12).map(|i| (i.to_string(), two)).collect();
        let c = combine(&twelve, 1.0).unwrap();
        assert_eq!(c.product_lower, Bound::Finite(4096.0));
        assert_eq!(c.posterior_odds_upper, Bound::Finite(4096.0));

        let open = EvidentialValue {
            lower: Bound::Finite(13.95),
            upper: Bound::Unbounded,
            case: Case::Below,
            mode: Mode::Paper,
        };
        let c = combine(&[("a".into(), two), ("b".into(), open)], 0.01).unwrap();
        assert!((c.product_lower.as_f64() - 27.9).abs() < 1e-12);
        assert_eq!(c.product_upper, Bound::Unbounded);
        assert!((c.posterior_odds_lower.as_f64() - 0.279).abs() < 1e-12);
        assert_eq!(c.posterior_odds_upper, Bound::Unbounded);

        assert!(combine(&[], 1.0).is_err());
        assert!(combine(&[("a".into(), two)], 0.0).is_err());
    }

    #[test]
    fn bound_serde_round_trip() {
        let v = serde_json::to_string(&[Bound::Finite(1.5), Bound::Unbounded]).unwrap();
        assert_eq!(v, r#"[1.5,"inf"]"#);
        let back: Vec<Bound> = serde_json::from_str(&v).unwrap();
        assert_eq!(back, vec![Bound::Finite(1.5), Bound::Unbounded]);
    }
}
