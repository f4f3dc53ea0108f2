//! Location perturbation mechanisms over the full cell domain: the
//! closed-form distribution, a genuine permute-and-flip sampler with its
//! exact output pmf, an exponential-mechanism baseline, and the
//! indistinguishability ratio check.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::pls::ProtectionLocationSet;

/// Pmf mass bookkeeping tolerance.
pub const PMF_TOL: f64 = 1e-9;

/// Slack allowed on the privacy-ratio bound.
pub const RATIO_SLACK: f64 = 1e-9;

/// Largest domain accepted by the exact permute-and-flip pmf; beyond this the
/// binomial terms in the scan-order weights overflow f64.
const PF_EXACT_MAX_DOMAIN: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MechanismKind {
    /// The literal closed-form distribution (coincides with the exponential
    /// baseline after normalization).
    #[serde(rename = "closed")]
    ClosedForm,
    /// Genuine permute-and-flip selection over the cell domain.
    #[serde(rename = "pf")]
    PermuteAndFlip,
    /// Standard exponential mechanism with utility `-d` and sensitivity
    /// `D(PLS)`.
    #[serde(rename = "exp")]
    ExponentialBaseline,
}

impl MechanismKind {
    pub fn label(self) -> &'static str {
        match self {
            MechanismKind::ClosedForm => "closed",
            MechanismKind::PermuteAndFlip => "pf",
            MechanismKind::ExponentialBaseline => "exp",
        }
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pf" => Ok(MechanismKind::PermuteAndFlip),
            "closed" => Ok(MechanismKind::ClosedForm),
            "exp" => Ok(MechanismKind::ExponentialBaseline),
            other => Err(Error::Config(format!(
                "unknown mechanism '{other}', expected pf | closed | exp"
            ))),
        }
    }
}

/// A perturbation mechanism instance: true cell, its protection set, and the
/// privacy budget. The output domain is always the full cell set.
#[derive(Debug, Clone)]
pub struct PerturbationModel {
    kind: MechanismKind,
    true_cell: CellId,
    /// Utility sensitivity, equal to the protection set diameter.
    sensitivity_km: f64,
    epsilon: f64,
}

impl PerturbationModel {
    pub fn new(
        kind: MechanismKind,
        true_cell: CellId,
        pls: &ProtectionLocationSet,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        if !pls.contains(true_cell) {
            return Err(Error::InvalidInput(format!(
                "true cell {true_cell} is not a member of its protection set"
            )));
        }
        Ok(PerturbationModel {
            kind,
            true_cell,
            sensitivity_km: pls.diameter_km(),
            epsilon,
        })
    }

    /// Builds a model directly from a sensitivity value. Used when several
    /// hypothesized true cells must share one sensitivity.
    pub fn with_sensitivity(
        kind: MechanismKind,
        true_cell: CellId,
        sensitivity_km: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(sensitivity_km >= 0.0) || !sensitivity_km.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sensitivity must be finite and nonnegative, got {sensitivity_km}"
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(PerturbationModel {
            kind,
            true_cell,
            sensitivity_km,
            epsilon,
        })
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn true_cell(&self) -> CellId {
        self.true_cell
    }

    pub fn sensitivity_km(&self) -> f64 {
        self.sensitivity_km
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Exact output pmf of this mechanism over all cells.
    pub fn pmf(&self, map: &GridMap) -> Result<PerturbationDistribution> {
        map.check_cell(self.true_cell)?;
        match self.kind {
            MechanismKind::ClosedForm => closed_form_pmf(self, map),
            MechanismKind::ExponentialBaseline => exponential_baseline_pmf(self, map),
            MechanismKind::PermuteAndFlip => pf_exact_pmf(self, map),
        }
    }

    /// Draws one perturbed location.
    ///
    /// Permute-and-flip runs its scan procedure; the other mechanisms invert
    /// their exact cdf on a single uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, map: &GridMap, rng: &mut R) -> Result<CellId> {
        map.check_cell(self.true_cell)?;
        match self.kind {
            MechanismKind::PermuteAndFlip => pf_sample(self, map, rng),
            _ => {
                let pmf = self.pmf(map)?;
                Ok(pmf.sample(rng))
            }
        }
    }

    /// Flip-acceptance probability for each candidate cell: `exp(-eps *
    /// d(x, r) / (2 * sensitivity))`. The true cell itself has probability 1.
    fn acceptance_probs(&self, map: &GridMap) -> Vec<f64> {
        let x = self.true_cell.index();
        let scale = -self.epsilon / (2.0 * self.sensitivity_km);
        (0..map.n()).map(|r| (scale * map.d(x, r)).exp()).collect()
    }
}

/// A pmf over all cells produced by a perturbation mechanism.
#[derive(Debug, Clone)]
pub struct PerturbationDistribution {
    probs: Vec<f64>,
    degenerate: bool,
}

impl PerturbationDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty pmf".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "pmf entries must be finite and nonnegative, got {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidInput(format!(
                "pmf mass is {sum}, expected 1 within {PMF_TOL}"
            )));
        }
        Ok(PerturbationDistribution {
            probs,
            degenerate: false,
        })
    }

    fn point_mass(n: usize, at: CellId) -> Self {
        let mut probs = vec![0.0; n];
        probs[at.index()] = 1.0;
        PerturbationDistribution {
            probs,
            degenerate: true,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, c: CellId) -> f64 {
        self.probs[c.index()]
    }

    /// True when the mechanism collapsed to a point mass because the
    /// protection set was a singleton (zero sensitivity).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-cdf draw on one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CellId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return CellId::new(i);
            }
        }
        // numeric tail: fall back to the last nonzero entry
        let last = self
            .probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probs.len() - 1);
        CellId::new(last)
    }
}

fn normalized_exp_weights(weights: Vec<f64>) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

/// The closed-form perturbation distribution: mass proportional to
/// `exp(-eps * (d(x, x') - max_d) / (2 * D))`, normalized over all cells.
pub fn closed_form_pmf(model: &PerturbationModel, map: &GridMap) -> Result<PerturbationDistribution> {
    if model.sensitivity_km == 0.0 {
        return Ok(PerturbationDistribution::point_mass(map.n(), model.true_cell));
    }
    let x = model.true_cell.index();
    let dmax = (0..map.n()).map(|r| map.d(x, r)).fold(0.0, f64::max);
    let scale = -model.epsilon / (2.0 * model.sensitivity_km);
    let weights: Vec<f64> = (0..map.n())
        .map(|r| (scale * (map.d(x, r) - dmax)).exp())
        .collect();
    Ok(PerturbationDistribution {
        probs: normalized_exp_weights(weights),
        degenerate: false,
    })
}

/// Exponential mechanism with utility `-d(x, x')` and sensitivity `D(PLS)`.
pub fn exponential_baseline_pmf(
    model: &PerturbationModel,
    map: &GridMap,
) -> Result<PerturbationDistribution> {
    if model.sensitivity_km == 0.0 {
        return Ok(PerturbationDistribution::point_mass(map.n(), model.true_cell));
    }
    let x = model.true_cell.index();
    let scale = -model.epsilon / (2.0 * model.sensitivity_km);
    let weights: Vec<f64> = (0..map.n()).map(|r| (scale * map.d(x, r)).exp()).collect();
    Ok(PerturbationDistribution {
        probs: normalized_exp_weights(weights),
        degenerate: false,
    })
}

/// One permute-and-flip draw: scan a uniformly random permutation of the
/// domain and return the first candidate whose flip accepts. The true cell
/// accepts with probability 1, so the scan always terminates.
pub fn pf_sample<R: Rng + ?Sized>(
    model: &PerturbationModel,
    map: &GridMap,
    rng: &mut R,
) -> Result<CellId> {
    if model.sensitivity_km == 0.0 || map.n() == 1 {
        return Ok(model.true_cell);
    }
    let accept = model.acceptance_probs(map);
    let mut order: Vec<usize> = (0..map.n()).collect();
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for r in order {
        if accept[r] >= 1.0 || rng.gen::<f64>() < accept[r] {
            return Ok(CellId::new(r));
        }
    }
    unreachable!("the true cell always accepts");
}

/// Exact output distribution of the permute-and-flip scan.
///
/// For candidate `r` with acceptance probability `p_r`,
/// `Pr[r] = p_r * sum_k w_k * e_k(q_{-r})` where `q_j = 1 - p_j`, `e_k` is the
/// k-th elementary symmetric polynomial over the other candidates, and
/// `w_k = k! (m-1-k)! / m!` is the probability that exactly k candidates
/// precede `r` in the permutation. All terms are nonnegative, so the
/// evaluation is stable; candidates sharing an acceptance probability share
/// their symmetric polynomials.
pub fn pf_exact_pmf(model: &PerturbationModel, map: &GridMap) -> Result<PerturbationDistribution> {
    let m = map.n();
    if m > PF_EXACT_MAX_DOMAIN {
        return Err(Error::DomainTooLarge(format!(
            "exact permute-and-flip pmf supports up to {PF_EXACT_MAX_DOMAIN} cells, got {m}; \
             estimate by Monte Carlo sampling instead"
        )));
    }
    if model.sensitivity_km == 0.0 || m == 1 {
        return Ok(PerturbationDistribution::point_mass(m, model.true_cell));
    }
    let accept = model.acceptance_probs(map);
    let rejects: Vec<f64> = accept.iter().map(|&p| 1.0 - p).collect();

    // w_0 = (m-1)!/m! = 1/m, w_{k+1} = w_k * (k+1) / (m-1-k)
    let mut scan_weights = Vec::with_capacity(m);
    let mut w = 1.0 / m as f64;
    scan_weights.push(w);
    for k in 0..m - 1 {
        w *= (k + 1) as f64 / (m - 1 - k) as f64;
        scan_weights.push(w);
    }

    // elementary symmetric polynomials of all q except one occurrence of q_r,
    // computed once per distinct q value
    let mut probs = vec![0.0; m];
    let mut cache: Vec<(f64, f64)> = Vec::new(); // (q value, resulting mass factor)
    for r in 0..m {
        let q_r = rejects[r];
        let factor = match cache
            .iter()
            .find(|&&(q, _)| q == q_r)
        {
            Some(&(_, f)) => f,
            None => {
                let mut e = vec![0.0; m];
                e[0] = 1.0;
                let mut used = 0usize;
                let mut skipped = false;
                for (j, &q) in rejects.iter().enumerate() {
                    if !skipped && j == r {
                        skipped = true;
                        continue;
                    }
                    used += 1;
                    for k in (1..=used).rev() {
                        e[k] += q * e[k - 1];
                    }
                }
                let f: f64 = (0..m).map(|k| scan_weights[k] * e[k]).sum();
                cache.push((q_r, f));
                f
            }
        };
        probs[r] = accept[r] * factor;
    }
    PerturbationDistribution::from_probs(probs)
}

/// Result of the pairwise indistinguishability ratio check.
#[derive(Debug, Clone)]
pub struct DpRatioReport {
    pub ok: bool,
    /// Largest `|ln(p_x(o) / p_y(o))|` over all pairs and outputs, infinite
    /// when one side has zero mass where the other does not.
    pub worst_log_ratio: f64,
}

impl DpRatioReport {
    pub fn worst_ratio(&self) -> f64 {
        self.worst_log_ratio.exp()
    }
}

/// Checks `e^-eps <= p_x(o) / p_y(o) <= e^eps` for every pair of pmfs and
/// every output where both have mass, with a small slack. One-sided zero mass
/// counts as a violation.
pub fn dp_ratio_check(pmfs: &[&PerturbationDistribution], epsilon: f64) -> Result<DpRatioReport> {
    if pmfs.is_empty() {
        return Err(Error::InvalidInput("no pmfs to compare".into()));
    }
    let n = pmfs[0].len();
    if pmfs.iter().any(|p| p.len() != n) {
        return Err(Error::DimensionMismatch(
            "pmfs must share one output domain".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for i in 0..pmfs.len() {
        for j in i + 1..pmfs.len() {
            for k in 0..n {
                let (a, b) = (pmfs[i].probs()[k], pmfs[j].probs()[k]);
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                if a == 0.0 || b == 0.0 {
                    return Ok(DpRatioReport {
                        ok: false,
                        worst_log_ratio: f64::INFINITY,
                    });
                }
                worst = worst.max((a.ln() - b.ln()).abs());
            }
        }
    }
    Ok(DpRatioReport {
        ok: worst <= epsilon + RATIO_SLACK,
        worst_log_ratio: worst,
    })
}

/// Per-true-cell mechanism pmfs, the attacker's model of the public mechanism.
#[derive(Debug, Clone)]
pub struct MechanismFamily {
    domain: usize,
    entries: Vec<(CellId, PerturbationDistribution)>,
}

impl MechanismFamily {
    pub fn new(domain: usize) -> Self {
        MechanismFamily {
            domain,
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, true_cell: CellId, pmf: PerturbationDistribution) -> Result<()> {
        if pmf.len() != self.domain {
            return Err(Error::DimensionMismatch(format!(
                "pmf over {} cells in a family with domain {}",
                pmf.len(),
                self.domain
            )));
        }
        match self.entries.binary_search_by_key(&true_cell, |e| e.0) {
            Ok(pos) => self.entries[pos] = (true_cell, pmf),
            Err(pos) => self.entries.insert(pos, (true_cell, pmf)),
        }
        Ok(())
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn pmf_for(&self, true_cell: CellId) -> Option<&PerturbationDistribution> {
        self.entries
            .binary_search_by_key(&true_cell, |e| e.0)
            .ok()
            .map(|pos| &self.entries[pos].1)
    }

    /// `f(observed | true_cell)`, if the family models that true cell.
    pub fn likelihood(&self, true_cell: CellId, observed: CellId) -> Option<f64> {
        self.pmf_for(true_cell).map(|p| p.prob(observed))
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellId, &PerturbationDistribution)> + '_ {
        self.entries.iter().map(|e| (e.0, &e.1))
    }
}
