//! Bayesian attacker: posterior update, optimal inference, and the expected
//! inference error functionals.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::{BeliefRole, BeliefVector};
use crate::perturb::MechanismFamily;

/// Bayes update of a prior against the attacker's mechanism model after
/// observing a released cell.
///
/// Every cell carrying prior mass must be modeled by the family; an
/// observation with zero total likelihood is inconsistent with the model.
pub fn posterior(
    prior: &BeliefVector,
    family: &MechanismFamily,
    observed: CellId,
) -> Result<BeliefVector> {
    if family.domain() != prior.len() {
        return Err(Error::DimensionMismatch(format!(
            "prior over {} cells, mechanism family over {}",
            prior.len(),
            family.domain()
        )));
    }
    let mut weights = vec![0.0; prior.len()];
    for (i, &p) in prior.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let lik = family
            .likelihood(CellId::new(i), observed)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "mechanism family has no pmf for cell {i} which carries prior mass"
                ))
            })?;
        weights[i] = p * lik;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InconsistentObservation);
    }
    let probs = weights.into_iter().map(|w| w / total).collect();
    BeliefVector::new(probs, BeliefRole::Posterior, prior.time())
}

/// Expected distance to the true location when guessing `guess` against the
/// given belief.
pub fn expected_error_for_guess(belief: &BeliefVector, guess: CellId, map: &GridMap) -> f64 {
    belief
        .probs()
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(i, &p)| p * map.d(guess.index(), i))
        .sum()
}

/// The guess minimizing posterior-expected distance, searched over the whole
/// map; ties go to the lowest cell id.
pub fn optimal_inference(posterior: &BeliefVector, map: &GridMap) -> CellId {
    let mut best = CellId::new(0);
    let mut best_err = f64::INFINITY;
    for g in 0..map.n() {
        let err = expected_error_for_guess(posterior, CellId::new(g), map);
        if err < best_err {
            best = CellId::new(g);
            best_err = err;
        }
    }
    best
}

/// Conditional expected inference error: the optimal guess's expected
/// distance under the posterior.
pub fn expected_inference_error(posterior: &BeliefVector, map: &GridMap) -> f64 {
    let guess = optimal_inference(posterior, map);
    expected_error_for_guess(posterior, guess, map)
}

/// Prior-weighted minimum expected guessing distance restricted to a
/// candidate protection set: the quantity compared against `e^eps * E_m`.
pub fn prior_weighted_error(members: &[CellId], prior: &BeliefVector, map: &GridMap) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidInput(
            "prior_weighted_error needs a nonempty set".into(),
        ));
    }
    let mass: f64 = members.iter().map(|&c| prior.get(c)).sum();
    if !(mass > 0.0) {
        return Err(Error::InvalidInput(
            "protection set carries zero prior mass".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for g in 0..map.n() {
        let mut err = 0.0;
        for &c in members {
            err += prior.get(c) * map.d(g, c.index());
        }
        best = best.min(err / mass);
    }
    Ok(best)
}

/// Deterministic attack: one inferred cell per observable cell.
#[derive(Debug, Clone)]
pub struct AttackStrategy {
    inferred: Vec<CellId>,
}

impl AttackStrategy {
    pub fn from_inferred(inferred: Vec<CellId>) -> Self {
        AttackStrategy { inferred }
    }

    /// The optimal-inference strategy against a prior and mechanism model:
    /// Bayes posterior then distance-minimizing guess per observation.
    /// Observations with zero marginal probability map to cell 0; they never
    /// contribute to any metric.
    pub fn optimal(prior: &BeliefVector, family: &MechanismFamily, map: &GridMap) -> Result<Self> {
        let mut inferred = Vec::with_capacity(map.n());
        for obs in 0..map.n() {
            match posterior(prior, family, CellId::new(obs)) {
                Ok(post) => inferred.push(optimal_inference(&post, map)),
                Err(Error::InconsistentObservation) => inferred.push(CellId::new(0)),
                Err(e) => return Err(e),
            }
        }
        Ok(AttackStrategy { inferred })
    }

    pub fn inferred(&self, observed: CellId) -> CellId {
        self.inferred[observed.index()]
    }

    pub fn len(&self) -> usize {
        self.inferred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inferred.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn posterior_examples() {
        // constant likelihood keeps a uniform prior uniform
        let fam = family_from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let prior = BeliefVector::new(vec![0.5, 0.5], BeliefRole::Prior, 1).unwrap();
        let post = posterior(&prior, &fam, CellId::new(0)).unwrap();
        assert_relative_eq!(post.probs()[0], 0.5);
        assert_eq!(post.role(), BeliefRole::Posterior);

        // one-hot prior stays one-hot
        let one_hot = BeliefVector::new(vec![0.0, 1.0], BeliefRole::Prior, 1).unwrap();
        let post = posterior(&one_hot, &fam, CellId::new(1)).unwrap();
        assert_eq!(post.probs(), &[0.0, 1.0]);

        // hand Bayes: prior 0.5/0.5, likelihoods 0.8 and 0.4 -> 2/3, 1/3
        let fam = family_from_rows(vec![vec![0.8, 0.2], vec![0.4, 0.6]]);
        let post = posterior(&prior, &fam, CellId::new(0)).unwrap();
        assert_relative_eq!(post.probs()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(post.probs()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn posterior_rejects_impossible_observation() {
        let fam = family_from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let prior = BeliefVector::new(vec![0.5, 0.5], BeliefRole::Prior, 1).unwrap();
        assert!(matches!(
            posterior(&prior, &fam, CellId::new(1)),
            Err(Error::InconsistentObservation)
        ));
    }

    #[test]
    fn optimal_inference_examples() {
        let line = GridMap::new(3, 1, 5.0).unwrap();

        let one_hot = BeliefVector::new(vec![0.0, 0.0, 1.0], BeliefRole::Posterior, 1).unwrap();
        assert_eq!(optimal_inference(&one_hot, &line), CellId::new(2));
        assert_relative_eq!(expected_inference_error(&one_hot, &line), 0.0);

        // 0.5/0.5/0 on a 5 km line: cells 0 and 1 tie at 2.5 km, lowest id wins
        let p = BeliefVector::new(vec![0.5, 0.5, 0.0], BeliefRole::Posterior, 1).unwrap();
        assert_eq!(optimal_inference(&p, &line), CellId::new(0));
        assert_relative_eq!(expected_inference_error(&p, &line), 2.5);

        // 0.5/0/0.5: everything ties at 5 km, brute force plus tie rule -> cell 0
        let p = BeliefVector::new(vec![0.5, 0.0, 0.5], BeliefRole::Posterior, 1).unwrap();
        assert_eq!(optimal_inference(&p, &line), CellId::new(0));
        assert_relative_eq!(expected_inference_error(&p, &line), 5.0);
    }

    #[test]
    fn expected_error_is_minimal_over_fixed_guesses() {
        let map = GridMap::new(4, 4, 1.0).unwrap();
        // deterministic pseudo-random beliefs
        let mut state = 1234567u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64)
        };
        for _ in 0..50 {
            let weights: Vec<f64> = (0..16).map(|_| next() + 1e-3).collect();
            let b = BeliefVector::from_weights(weights, BeliefRole::Posterior, 0).unwrap();
            let opt = expected_inference_error(&b, &map);
            for g in 0..16 {
                assert!(opt <= expected_error_for_guess(&b, CellId::new(g), &map) + 1e-12);
            }
        }
    }

    #[test]
    fn prior_weighted_error_examples() {
        let line = GridMap::new(4, 1, 5.0).unwrap();
        let prior = BeliefVector::new(vec![0.25; 4], BeliefRole::Prior, 1).unwrap();

        // singleton set: guess the member
        let e = prior_weighted_error(&[CellId::new(2)], &prior, &line).unwrap();
        assert_relative_eq!(e, 0.0);

        // two equal-prior cells 5 km apart
        let e = prior_weighted_error(&[CellId::new(0), CellId::new(1)], &prior, &line).unwrap();
        assert_relative_eq!(e, 2.5);

        // weights 0.9/0.1 on adjacent cells: guess the heavy one, error 0.5 km
        let skew = BeliefVector::new(vec![0.9, 0.1, 0.0, 0.0], BeliefRole::Prior, 1).unwrap();
        let e = prior_weighted_error(&[CellId::new(0), CellId::new(1)], &skew, &line).unwrap();
        assert_relative_eq!(e, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn prior_weighted_error_rejects_zero_mass() {
        let line = GridMap::new(3, 1, 5.0).unwrap();
        let prior = BeliefVector::new(vec![1.0, 0.0, 0.0], BeliefRole::Prior, 1).unwrap();
        assert!(prior_weighted_error(&[CellId::new(1)], &prior, &line).is_err());
        assert!(prior_weighted_error(&[], &prior, &line).is_err());
    }
}
