//! Synthetic three-cell data under independence and under the copying
//! mechanism, and Monte Carlo estimates of null exceedance probabilities.
//!
//! Copying model: with `U_j`, `V_ij` iid standard normal and independent
//! indicators `D_ij ~ Bernoulli(p_i)`,
//!
//! ```text
//! eps_ij = sigma_i * (D_ij * U_j + (1 - D_ij) * V_ij)
//! p_1 = sqrt(rho2 rho3 / rho1), p_2 = sqrt(rho1 rho3 / rho2), p_3 = sqrt(rho1 rho2 / rho3)
//! ```
//!
//! so that `corr(eps_1j, eps_2j) = p_1 p_2 = rho3` and so on.
//!
//! Every replication draws from its own ChaCha stream selected by the
//! replication index, so results do not depend on how work is scheduled.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{self, evidential_value_from, Mode};
use crate::geometry::{self, CorrelationTriple};
use crate::ledger::StudySummary;
use crate::parallel::Execution;

pub const MIN_REPS: u64 = 1_000;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub rho: CorrelationTriple,
    pub n: usize,
}

impl ModelParams {
    pub fn null(mu: [f64; 3], sigma: [f64; 3], n: usize) -> Self {
        Self {
            mu,
            sigma,
            rho: CorrelationTriple::ZERO,
            n,
        }
    }

    fn check(&self) -> Result<[f64; 3]> {
        if self.n == 0 {
            return Err(Error::Parameter("n must be positive".into()));
        }
        if !self.sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {:?}",
                self.sigma
            )));
        }
        if !self.mu.iter().all(|m| m.is_finite()) {
            return Err(Error::Parameter("mu must be finite".into()));
        }
        copy_probabilities(&self.rho)
    }
}

/// Bernoulli copy probabilities `(p1, p2, p3)`; all zero at independence.
pub fn copy_probabilities(rho: &CorrelationTriple) -> Result<[f64; 3]> {
    if rho.is_zero() {
        return Ok([0.0; 3]);
    }
    let [r1, r2, r3] = rho.rho();
    if !(r1 > 0.0 && r2 > 0.0 && r3 > 0.0) {
        return Err(Error::Parameter(format!(
            "copying needs all correlations positive, got ({r1}, {r2}, {r3})"
        )));
    }
    let conditions = [
        (r2 * r3, r1, "rho2*rho3 <= rho1"),
        (r1 * r3, r2, "rho1*rho3 <= rho2"),
        (r1 * r2, r3, "rho1*rho2 <= rho3"),
    ];
    let mut p = [0.0; 3];
    for (i, (num, den, name)) in conditions.into_iter().enumerate() {
        if num > den {
            return Err(Error::Parameter(format!(
                "copy probability above 1: {name} violated ({num} > {den})"
            )));
        }
        p[i] = (num / den).sqrt();
    }
    Ok(p)
}

/// A generated 3 x n error matrix together with the copy indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDraw {
    pub errors: [Vec<f64>; 3],
    pub copied: [Vec<bool>; 3],
}

fn draw_errors<R: Rng>(params: &ModelParams, probs: [f64; 3], rng: &mut R) -> ErrorDraw {
    let n = params.n;
    let mut errors: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut copied: [Vec<bool>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    let copying = probs.iter().any(|p| *p > 0.0);
    for _ in 0..n {
        let shared: f64 = if copying {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        for i in 0..3 {
            let own: f64 = rng.sample(StandardNormal);
            let copy = copying && rng.random::<f64>() < probs[i];
            let standard = if copy { shared } else { own };
            errors[i].push(params.sigma[i] * standard);
            copied[i].push(copy);
        }
    }
    ErrorDraw { errors, copied }
}

/// Measurement errors `eps_ij` for one study, from stream 0 of `seed`.
pub fn generate_errors(params: &ModelParams, seed: u64) -> Result<ErrorDraw> {
    let probs = params.check()?;
    Ok(draw_errors(params, probs, &mut stream_rng(seed, 0)))
}

fn summarize(id: String, params: &ModelParams, draw: &ErrorDraw) -> StudySummary {
    let n = params.n as f64;
    let mut means = [0.0; 3];
    let mut sds = [0.0; 3];
    for i in 0..3 {
        let row = &draw.errors[i];
        let mean_err = row.iter().sum::<f64>() / n;
        let ss: f64 = row.iter().map(|e| (e - mean_err).powi(2)).sum();
        means[i] = params.mu[i] + mean_err;
        sds[i] = (ss / (n - 1.0)).sqrt();
    }
    StudySummary::new(id, n, means, sds)
}

fn simulate_stream(params: &ModelParams, probs: [f64; 3], seed: u64, stream: u64) -> StudySummary {
    let draw = draw_errors(params, probs, &mut stream_rng(seed, stream));
    summarize(format!("sim-{stream}"), params, &draw)
}

/// Cell means and sample sds of one simulated study (stream 0 of `seed`).
pub fn simulate_study(params: &ModelParams, seed: u64) -> Result<StudySummary> {
    let probs = params.check()?;
    if params.n < 2 {
        return Err(Error::Parameter("n ≥ 2 required for sample sd".into()));
    }
    Ok(simulate_stream(params, probs, seed, 0))
}

/// Design of a null simulation: per-cell size and cell standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullShape {
    pub n: usize,
    pub sigma: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n: usize,
    pub sigma: [f64; 3],
    pub reps: u64,
    pub seed: u64,
    pub v_threshold: f64,
    pub exceed_prob: f64,
    pub mc_stderr: f64,
    /// The normal-approximation counterpart `2 Phi(r) - 1`.
    pub analytic_prob: f64,
}

pub fn null_exceedance(
    shape: NullShape,
    v_threshold: f64,
    reps: u64,
    seed: u64,
) -> Result<SimulationReport> {
    null_exceedance_with(shape, v_threshold, reps, seed, Execution::default())
}

/// Estimates `P(V >= v_threshold)` under independence by simulating `reps`
/// studies with `mu = 0`. A study counts when the lower end of its
/// paper-mode value reaches the threshold.
pub fn null_exceedance_with(
    shape: NullShape,
    v_threshold: f64,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<SimulationReport> {
    if reps < MIN_REPS {
        return Err(Error::Parameter(format!(
            "reps must be at least {MIN_REPS}, got {reps}"
        )));
    }
    let analytic_prob = evidence::null_tail_probability(v_threshold)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    if shape.n < 2 {
        return Err(Error::Parameter("n ≥ 2 required for sample sd".into()));
    }
    let params = ModelParams::null([0.0; 3], shape.sigma, shape.n);
    let probs = params.check()?;

    let hits = exec.count(reps, |rep| {
        let study = simulate_stream(&params, probs, seed, rep);
        u64::from(null_value(&study).at_least(v_threshold))
    });
    let p = hits as f64 / reps as f64;
    Ok(SimulationReport {
        n: shape.n,
        sigma: shape.sigma,
        reps,
        seed,
        v_threshold,
        exceed_prob: p,
        mc_stderr: (p * (1.0 - p) / reps as f64).sqrt(),
        analytic_prob,
    })
}

fn null_value(study: &StudySummary) -> evidence::EvidentialValue {
    let z = study.contrast();
    evidential_value_from(
        study.n * z * z,
        geometry::s0_sq(study.sds),
        geometry::paper_lower_bound_sq(study.sds),
        Mode::Paper,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(a: f64, b: f64, c: f64) -> CorrelationTriple {
        CorrelationTriple::new(a, b, c).unwrap()
    }

    #[test]
    fn probabilities() {
        let p = copy_probabilities(&triple(0.5, 0.5, 0.5)).unwrap();
        for pi in p {
            assert!((pi - 0.5f64.sqrt()).abs() < 1e-15);
        }
        let p = copy_probabilities(&triple(0.9, 0.1, 0.1)).unwrap();
        assert!((p[0] * p[0] - 0.01 / 0.9).abs() < 1e-15);
        assert!((p[1] * p[1] - 0.9).abs() < 1e-12);
        assert!((p[2] * p[2] - 0.9).abs() < 1e-12);
        assert_eq!(
            copy_probabilities(&CorrelationTriple::ZERO).unwrap(),
            [0.0; 3]
        );
    }

    #[test]
    fn invalid_probabilities_name_the_condition() {
        let err = copy_probabilities(&triple(0.1, 0.5, 0.5)).unwrap_err();
        assert!(err.to_string().contains("rho2*rho3 <= rho1"), "{err}");
        assert!(copy_probabilities(&triple(0.5, -0.2, 0.5)).is_err());
        assert!(copy_probabilities(&triple(0.5, 0.0, 0.5)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let params = ModelParams {
            mu: [0.0; 3],
            sigma: [1.0, 2.0, 3.0],
            rho: triple(0.5, 0.5, 0.5),
            n: 50,
        };
        assert_eq!(
            generate_errors(&params, 7).unwrap(),
            generate_errors(&params, 7).unwrap()
        );
        assert_ne!(
            generate_errors(&params, 7).unwrap(),
            generate_errors(&params, 8).unwrap()
        );
    }

    #[test]
    fn null_never_copies() {
        let params = ModelParams::null([0.0; 3], [1.0; 3], 500);
        let draw = generate_errors(&params, 1).unwrap();
        assert!(draw.copied.iter().flatten().all(|c| !c));
    }

    #[test]
    fn n_one_has_no_sample_sd() {
        let params = ModelParams::null([0.0; 3], [1.0; 3], 1);
        let err = simulate_study(&params, 0).unwrap_err();
        assert!(err.to_string().contains("n ≥ 2 required for sample sd"));
    }

    #[test]
    fn reps_floor_and_threshold_domain() {
        let shape = NullShape {
            n: 20,
            sigma: [1.0; 3],
        };
        assert!(null_exceedance(shape, 2.0, 999, 1).is_err());
        assert!(null_exceedance(shape, 1.0, 1000, 1).is_err());
        assert!(null_exceedance(
            NullShape {
                n: 1,
                sigma: [1.0; 3]
            },
            2.0,
            1000,
            1
        )
        .is_err());
        assert!(null_exceedance(
            NullShape {
                n: 20,
                sigma: [1.0, 0.0, 1.0]
            },
            2.0,
            1000,
            1
        )
        .is_err());
    }

    #[test]
    fn report_stderr_formula() {
        let r = null_exceedance(
            NullShape {
                n: 20,
                sigma: [1.0; 3],
            },
            2.0,
            2000,
            3,
        )
        .unwrap();
        let expected = (r.exceed_prob * (1.0 - r.exceed_prob) / 2000.0).sqrt();
        assert_eq!(r.mc_stderr, expected);
    }
}
