//! Privacy and QoS-loss metrics, per-trajectory aggregation, and the
//! equal-QoS privacy-budget solve.

use crate::adversary::AttackStrategy;
use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::BeliefVector;
use crate::perturb::MechanismFamily;

/// Metrics for a single trajectory step.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub time: usize,
    /// Location privacy p in km.
    pub privacy_km: f64,
    /// QoS loss q in km.
    pub qos_km: f64,
    /// Diameter of the protection set used for the released location.
    pub diameter_km: f64,
    /// Conditional expected inference error of the realized observation.
    pub exper_km: f64,
    pub surrogate_used: bool,
    pub fallback_pls: bool,
    /// Singleton protection set forced a point-mass mechanism.
    pub degenerate_mechanism: bool,
}

impl StepMetrics {
    pub fn flags(&self) -> String {
        let mut parts = Vec::new();
        if self.surrogate_used {
            parts.push("surrogate");
        }
        if self.fallback_pls {
            parts.push("fallback");
        }
        if self.degenerate_mechanism {
            parts.push("degenerate");
        }
        parts.join("+")
    }
}

/// Per-trajectory aggregate: arithmetic means over the steps.
#[derive(Debug, Clone)]
pub struct TrajectoryMetrics {
    pub steps: Vec<StepMetrics>,
    pub mean_privacy_km: f64,
    pub mean_qos_km: f64,
}

/// Averages step metrics over a trajectory.
pub fn trajectory_metrics(steps: Vec<StepMetrics>) -> Result<TrajectoryMetrics> {
    if steps.is_empty() {
        return Err(Error::InvalidInput("no steps to aggregate".into()));
    }
    let w = steps.len() as f64;
    let mean_privacy_km = steps.iter().map(|s| s.privacy_km).sum::<f64>() / w;
    let mean_qos_km = steps.iter().map(|s| s.qos_km).sum::<f64>() / w;
    Ok(TrajectoryMetrics {
        steps,
        mean_privacy_km,
        mean_qos_km,
    })
}

/// Location privacy: expected distance between the true location and the
/// attacker's inferred location,
/// `p = sum_x Pr(x) sum_x' f(x'|x) d(x, strategy(x'))`.
pub fn privacy_metric(
    prior: &BeliefVector,
    family: &MechanismFamily,
    strategy: &AttackStrategy,
    map: &GridMap,
) -> Result<f64> {
    if strategy.len() != map.n() {
        return Err(Error::DimensionMismatch(
            "attack strategy does not cover the map".into(),
        ));
    }
    let mut total = 0.0;
    for (x, &px) in prior.probs().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let pmf = family.pmf_for(CellId::new(x)).ok_or_else(|| {
            Error::InvalidInput(format!("no mechanism pmf for cell {x} with prior mass"))
        })?;
        let mut inner = 0.0;
        for (obs, &f) in pmf.probs().iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let guess = strategy.inferred(CellId::new(obs));
            inner += f * map.d(x, guess.index());
        }
        total += px * inner;
    }
    Ok(total)
}

/// QoS loss: expected distance between the true and released locations,
/// `q = sum_x Pr(x) sum_x' f(x'|x) d(x, x')`.
pub fn qos_loss(prior: &BeliefVector, family: &MechanismFamily, map: &GridMap) -> Result<f64> {
    let mut total = 0.0;
    for (x, &px) in prior.probs().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let pmf = family.pmf_for(CellId::new(x)).ok_or_else(|| {
            Error::InvalidInput(format!("no mechanism pmf for cell {x} with prior mass"))
        })?;
        let mut inner = 0.0;
        for (obs, &f) in pmf.probs().iter().enumerate() {
            if f > 0.0 {
                inner += f * map.d(x, obs);
            }
        }
        total += px * inner;
    }
    Ok(total)
}

/// Outcome of the equal-QoS budget solve.
#[derive(Debug, Clone)]
pub struct EpsilonSolve {
    pub epsilon: f64,
    pub achieved_q: f64,
    pub evaluations: usize,
}

/// Relative tolerance on the achieved QoS loss.
pub const QOS_SOLVE_REL_TOL: f64 = 0.01;
const QOS_SOLVE_MAX_ITERS: usize = 60;
const MONOTONICITY_SAMPLES: usize = 8;

/// Finds the budget achieving a target QoS loss by bisection over
/// `[eps_lo, eps_hi]`, at the default relative tolerance.
///
/// `eval` runs the full pipeline for a candidate budget and returns its QoS
/// loss. The bracket endpoints must straddle the target, and q must cross it
/// exactly once across the bracket (checked on interior samples); otherwise
/// the solve reports a bracket or ambiguity error.
pub fn solve_epsilon_for_qos<F>(
    target_q: f64,
    eps_lo: f64,
    eps_hi: f64,
    eval: F,
) -> Result<EpsilonSolve>
where
    F: FnMut(f64) -> Result<f64>,
{
    solve_epsilon_for_qos_with_tol(target_q, eps_lo, eps_hi, QOS_SOLVE_REL_TOL, eval)
}

/// As [`solve_epsilon_for_qos`] with an explicit relative tolerance on the
/// achieved QoS loss.
pub fn solve_epsilon_for_qos_with_tol<F>(
    target_q: f64,
    eps_lo: f64,
    eps_hi: f64,
    rel_tol: f64,
    mut eval: F,
) -> Result<EpsilonSolve>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(rel_tol > 0.0) || !rel_tol.is_finite() {
        return Err(Error::InvalidInput(format!(
            "relative tolerance must be positive, got {rel_tol}"
        )));
    }
    if !(target_q > 0.0) || !target_q.is_finite() {
        return Err(Error::InvalidInput(format!(
            "target QoS loss must be positive, got {target_q}"
        )));
    }
    if !(eps_lo > 0.0 && eps_hi > eps_lo) {
        return Err(Error::InvalidInput(format!(
            "bad bracket [{eps_lo}, {eps_hi}]"
        )));
    }
    let mut evaluations = 0usize;
    let mut eval = |e: f64| -> Result<f64> {
        evaluations += 1;
        eval(e)
    };
    let q_lo = eval(eps_lo)?;
    let q_hi = eval(eps_hi)?;
    if (q_lo - target_q) * (q_hi - target_q) > 0.0 {
        return Err(Error::NoBracket {
            target: target_q,
            lo: eps_lo,
            hi: eps_hi,
            q_lo,
            q_hi,
        });
    }

    // sample the interior: the target must be crossed exactly once
    let mut samples = vec![(eps_lo, q_lo)];
    for i in 1..=MONOTONICITY_SAMPLES {
        let e = eps_lo + (eps_hi - eps_lo) * i as f64 / (MONOTONICITY_SAMPLES + 1) as f64;
        samples.push((e, eval(e)?));
    }
    samples.push((eps_hi, q_hi));
    let mut crossings = Vec::new();
    for pair in samples.windows(2) {
        let (e0, q0) = pair[0];
        let (e1, q1) = pair[1];
        if (q0 - target_q) * (q1 - target_q) < 0.0 || q1 == target_q {
            crossings.push(0.5 * (e0 + e1));
        }
    }
    if crossings.len() > 1 {
        return Err(Error::NonMonotoneBracket { crossings });
    }

    let rising = q_hi > q_lo;
    let (mut lo, mut hi) = (eps_lo, eps_hi);
    let mut best = (eps_lo, q_lo);
    for _ in 0..QOS_SOLVE_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let q_mid = eval(mid)?;
        if (q_mid - target_q).abs() < (best.1 - target_q).abs() {
            best = (mid, q_mid);
        }
        if (q_mid - target_q).abs() <= rel_tol * target_q {
            return Ok(EpsilonSolve {
                epsilon: mid,
                achieved_q: q_mid,
                evaluations,
            });
        }
        if (q_mid < target_q) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonSolve {
        epsilon: best.0,
        achieved_q: best.1,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary;
    use crate::mobility::BeliefRole;
    use crate::perturb::PerturbationDistribution;
    use approx::assert_relative_eq;

    fn family_from_rows(rows: Vec<Vec<f64>>) -> MechanismFamily {
        let n = rows[0].len();
        let mut fam = MechanismFamily::new(n);
        for (i, row) in rows.into_iter().enumerate() {
            fam.insert(
                CellId::new(i),
                PerturbationDistribution::from_probs(row).unwrap(),
            )
            .unwrap();
        }
        fam
    }

    #[test]
    fn identity_mechanism_gives_zero_privacy_and_qos() {
        let map = GridMap::new(3, 1, 5.0).unwrap();
        let fam = family_from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let prior = BeliefVector::new(vec![0.2, 0.5, 0.3], BeliefRole::Prior, 1).unwrap();
        let strategy = AttackStrategy::optimal(&prior, &fam, &map).unwrap();
        assert_relative_eq!(privacy_metric(&prior, &fam, &strategy, &map).unwrap(), 0.0);
        assert_relative_eq!(qos_loss(&prior, &fam, &map).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_prior_gives_zero_privacy() {
        let map = GridMap::new(3, 1, 5.0).unwrap();
        let fam = family_from_rows(vec![
            vec![0.4, 0.3, 0.3],
            vec![0.3, 0.4, 0.3],
            vec![0.3, 0.3, 0.4],
        ]);
        let prior = BeliefVector::new(vec![0.0, 1.0, 0.0], BeliefRole::Prior, 1).unwrap();
        let strategy = AttackStrategy::optimal(&prior, &fam, &map).unwrap();
        assert_relative_eq!(privacy_metric(&prior, &fam, &strategy, &map).unwrap(), 0.0);
        // qos is still positive: the release is randomized
        assert!(qos_loss(&prior, &fam, &map).unwrap() > 0.0);
    }

    #[test]
    fn uniform_mechanism_on_two_cell_line() {
        // brute-force expansion of the full sum gives p = q = 2.5 km
        let map = GridMap::new(2, 1, 5.0).unwrap();
        let fam = family_from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let prior = BeliefVector::new(vec![0.5, 0.5], BeliefRole::Prior, 1).unwrap();
        let strategy = AttackStrategy::optimal(&prior, &fam, &map).unwrap();
        // posterior is uniform for either observation; attacker ties to cell 0
        assert_eq!(strategy.inferred(CellId::new(0)), CellId::new(0));
        assert_eq!(strategy.inferred(CellId::new(1)), CellId::new(0));
        assert_relative_eq!(
            privacy_metric(&prior, &fam, &strategy, &map).unwrap(),
            2.5
        );
        assert_relative_eq!(qos_loss(&prior, &fam, &map).unwrap(), 2.5);
    }

    #[test]
    fn point_mass_on_single_cell_map() {
        let map = GridMap::new(1, 1, 1.0).unwrap();
        let fam = family_from_rows(vec![vec![1.0]]);
        let prior = BeliefVector::new(vec![1.0], BeliefRole::Prior, 1).unwrap();
        assert_relative_eq!(qos_loss(&prior, &fam, &map).unwrap(), 0.0);
    }

    #[test]
    fn optimal_privacy_matches_total_expectation_of_exper() {
        // p under the optimal attacker equals sum_x' Pr(x') ExpEr(x')
        let map = GridMap::new(3, 2, 2.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|x| {
                let weights: Vec<f64> = (0..6)
                    .map(|o| (-0.4 * map.d(x, o)).exp())
                    .collect();
                let z: f64 = weights.iter().sum();
                weights.into_iter().map(|w| w / z).collect()
            })
            .collect();
        let fam = family_from_rows(rows);
        let prior =
            BeliefVector::from_weights(vec![1.0, 2.0, 1.0, 3.0, 1.0, 2.0], BeliefRole::Prior, 1)
                .unwrap();
        let strategy = AttackStrategy::optimal(&prior, &fam, &map).unwrap();
        let p = privacy_metric(&prior, &fam, &strategy, &map).unwrap();

        let mut by_obs = 0.0;
        for obs in 0..6 {
            let marginal: f64 = (0..6)
                .map(|x| prior.probs()[x] * fam.likelihood(CellId::new(x), CellId::new(obs)).unwrap())
                .sum();
            if marginal > 0.0 {
                let post = adversary::posterior(&prior, &fam, CellId::new(obs)).unwrap();
                by_obs += marginal * adversary::expected_inference_error(&post, &map);
            }
        }
        assert_relative_eq!(p, by_obs, epsilon = 1e-9);
    }

    #[test]
    fn metrics_stay_within_map_bounds() {
        let map = GridMap::new(4, 4, 3.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..16).map(|_| vec![1.0 / 16.0; 16]).collect();
        let fam = family_from_rows(rows);
        let prior = BeliefVector::from_weights((1..=16).map(|v| v as f64).collect(), BeliefRole::Prior, 1)
            .unwrap();
        let strategy = AttackStrategy::optimal(&prior, &fam, &map).unwrap();
        let p = privacy_metric(&prior, &fam, &strategy, &map).unwrap();
        let q = qos_loss(&prior, &fam, &map).unwrap();
        assert!(p >= 0.0 && p <= map.max_distance());
        assert!(q >= 0.0 && q <= map.max_distance());
    }

    #[test]
    fn trajectory_aggregation_examples() {
        let step = |t: usize, p: f64, q: f64| StepMetrics {
            time: t,
            privacy_km: p,
            qos_km: q,
            diameter_km: 0.0,
            exper_km: 0.0,
            surrogate_used: false,
            fallback_pls: false,
            degenerate_mechanism: false,
        };
        let single = trajectory_metrics(vec![step(1, 2.0, 3.0)]).unwrap();
        assert_relative_eq!(single.mean_privacy_km, 2.0);
        assert_relative_eq!(single.mean_qos_km, 3.0);

        let two = trajectory_metrics(vec![step(1, 2.0, 1.0), step(2, 4.0, 3.0)]).unwrap();
        assert_relative_eq!(two.mean_privacy_km, 3.0);
        assert_relative_eq!(two.mean_qos_km, 2.0);

        assert!(trajectory_metrics(vec![]).is_err());
    }

    #[test]
    fn qos_solve_recovers_a_known_point() {
        // q(eps) = 10 / (1 + eps), decreasing; solve for q at eps = 2
        let q_fn = |e: f64| Ok(10.0 / (1.0 + e));
        let target = 10.0 / 3.0;
        let sol = solve_epsilon_for_qos(target, 0.5, 8.0, q_fn).unwrap();
        assert!((sol.achieved_q - target).abs() <= QOS_SOLVE_REL_TOL * target);
        assert!((sol.epsilon - 2.0).abs() < 0.1);
    }

    #[test]
    fn qos_solve_rejects_unbracketed_target() {
        let q_fn = |e: f64| Ok(10.0 / (1.0 + e));
        match solve_epsilon_for_qos(0.1, 0.5, 8.0, q_fn) {
            Err(Error::NoBracket { .. }) => {}
            other => panic!("expected bracket error, got {other:?}"),
        }
    }

    #[test]
    fn qos_solve_rejects_non_monotone_bracket() {
        // cubic crosses the target at eps = 2, 4, and 6 inside the bracket
        let q_fn = |e: f64| Ok((e - 2.0) * (e - 4.0) * (e - 6.0) + 10.0);
        match solve_epsilon_for_qos(10.0, 1.0, 7.0, q_fn) {
            Err(Error::NonMonotoneBracket { crossings }) => {
                assert!(crossings.len() >= 2);
            }
            other => panic!("expected ambiguity error, got {other:?}"),
        }
    }

    #[test]
    fn qos_solve_cross_checked_against_grid_scan() {
        let q_fn = |e: f64| Ok(8.0 * (-0.3 * e).exp() + 0.5);
        let target = 3.0;
        let sol = solve_epsilon_for_qos(target, 0.1, 10.0, q_fn).unwrap();
        // dense scan oracle at step 0.01
        let mut best = (f64::INFINITY, 0.0);
        let mut e = 0.1;
        while e <= 10.0 {
            let q = 8.0 * (-0.3f64 * e).exp() + 0.5;
            if (q - target).abs() < best.0 {
                best = ((q - target).abs(), e);
            }
            e += 0.01;
        }
        assert!((sol.epsilon - best.1).abs() < 0.05);
    }
}
