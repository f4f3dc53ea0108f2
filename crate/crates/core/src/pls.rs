//! Minimum-diameter protection location set search over Hilbert-curve
//! windows, in four rotations.

use crate::adversary::prior_weighted_error;
use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap, HilbertOrdering, Rotation};
use crate::mobility::{BeliefVector, DeltaLocationSet};

/// Per-user privacy settings.
#[derive(Debug, Clone, Copy)]
pub struct PrivacyParams {
    epsilon: f64,
    e_m_km: f64,
    delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, e_m_km: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "privacy budget must be positive and finite, got {epsilon}"
            )));
        }
        if !(e_m_km >= 0.0) || !e_m_km.is_finite() {
            return Err(Error::InvalidInput(format!(
                "inference error threshold must be nonnegative, got {e_m_km}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(PrivacyParams {
            epsilon,
            e_m_km,
            delta,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn e_m_km(&self) -> f64 {
        self.e_m_km
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The error bound a candidate set must clear: `e^eps * E_m`.
    pub fn condition_threshold(&self) -> f64 {
        self.epsilon.exp() * self.e_m_km
    }
}

/// A protection location set: the cells over which the perturbation
/// mechanism guarantees indistinguishability for one protected location.
#[derive(Debug, Clone)]
pub struct ProtectionLocationSet {
    members: Vec<CellId>,
    diameter_km: f64,
    error_km: f64,
    rotation: Option<Rotation>,
    fallback: bool,
}

impl ProtectionLocationSet {
    /// Member cells in ascending id order.
    pub fn members(&self) -> &[CellId] {
        &self.members
    }

    /// Largest pairwise center distance among members.
    pub fn diameter_km(&self) -> f64 {
        self.diameter_km
    }

    /// Achieved prior-weighted error E of the set.
    pub fn error_km(&self) -> f64 {
        self.error_km
    }

    /// The Hilbert rotation that produced the winning window; `None` for the
    /// fallback set.
    pub fn rotation(&self) -> Option<Rotation> {
        self.rotation
    }

    /// True when no window satisfied the condition and the full
    /// delta-location set was returned instead.
    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: CellId) -> bool {
        self.members.binary_search(&c).is_ok()
    }

    #[cfg(test)]
    pub(crate) fn for_tests(
        members: Vec<CellId>,
        diameter_km: f64,
        error_km: f64,
        rotation: Option<Rotation>,
        fallback: bool,
    ) -> Self {
        ProtectionLocationSet {
            members,
            diameter_km,
            error_km,
            rotation,
            fallback,
        }
    }
}

/// Largest pairwise center distance of a cell set; 0 for a singleton.
pub fn diameter(members: &[CellId], map: &GridMap) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidInput("diameter of an empty set".into()));
    }
    for &c in members {
        map.check_cell(c)?;
    }
    let mut best = 0.0f64;
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            best = best.max(map.d(a.index(), b.index()));
        }
    }
    Ok(best)
}

/// Whether a candidate set clears the sufficient condition
/// `E(set) >= e^eps * E_m`.
pub fn satisfies_condition(
    members: &[CellId],
    prior: &BeliefVector,
    params: &PrivacyParams,
    map: &GridMap,
) -> Result<bool> {
    if members.is_empty() {
        return Err(Error::InvalidInput("empty candidate set".into()));
    }
    let threshold = params.condition_threshold();
    if threshold <= 0.0 {
        return Ok(true);
    }
    Ok(prior_weighted_error(members, prior, map)? >= threshold)
}

struct Candidate {
    members: Vec<usize>,
    diameter: f64,
    error: f64,
    rotation: Rotation,
}

/// Searches the four rotated Hilbert orderings for the minimum-diameter
/// contiguous window of delta-set members that contains `x` and satisfies
/// the error condition.
///
/// Ties go to fewer members, then the lowest rotation angle. When no window
/// qualifies the full delta-location set is returned, flagged as fallback.
pub fn search_pls(
    x: CellId,
    dls: &DeltaLocationSet,
    prior: &BeliefVector,
    params: &PrivacyParams,
    map: &GridMap,
) -> Result<ProtectionLocationSet> {
    let orderings = map.hilbert_orderings();
    search_pls_with_orderings(x, dls, prior, params, map, &orderings)
}

/// As [`search_pls`], reusing prebuilt orderings across many searches.
pub fn search_pls_with_orderings(
    x: CellId,
    dls: &DeltaLocationSet,
    prior: &BeliefVector,
    params: &PrivacyParams,
    map: &GridMap,
    orderings: &[HilbertOrdering; 4],
) -> Result<ProtectionLocationSet> {
    map.check_cell(x)?;
    if !dls.contains(x) {
        return Err(Error::InvalidInput(format!(
            "cell {x} is outside the delta-location set; substitute a surrogate first"
        )));
    }
    let threshold = params.condition_threshold();

    // the singleton {x} has zero error and zero diameter: global optimum
    // whenever the threshold is zero
    if threshold <= 0.0 {
        return Ok(ProtectionLocationSet {
            members: vec![x],
            diameter_km: 0.0,
            error_km: 0.0,
            rotation: Some(Rotation::Deg0),
            fallback: false,
        });
    }

    // E(set) never exceeds the set diameter, so nothing inside the delta set
    // can qualify when even its full diameter is below the threshold
    let full_diam = diameter(dls.cells(), map)?;
    let mut best: Option<Candidate> = None;
    if full_diam >= threshold {
        for ordering in orderings {
            search_rotation(x, dls, prior, map, ordering, threshold, &mut best)?;
        }
    }

    match best {
        Some(c) => {
            let mut members: Vec<CellId> = c.members.into_iter().map(CellId::new).collect();
            members.sort_unstable();
            Ok(ProtectionLocationSet {
                members,
                diameter_km: c.diameter,
                error_km: c.error,
                rotation: Some(c.rotation),
                fallback: false,
            })
        }
        None => {
            let error_km = prior_weighted_error(dls.cells(), prior, map)?;
            Ok(ProtectionLocationSet {
                members: dls.cells().to_vec(),
                diameter_km: full_diam,
                error_km,
                rotation: None,
                fallback: true,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search_rotation(
    x: CellId,
    dls: &DeltaLocationSet,
    prior: &BeliefVector,
    map: &GridMap,
    ordering: &HilbertOrdering,
    threshold: f64,
    best: &mut Option<Candidate>,
) -> Result<()> {
    let mut seq: Vec<usize> = dls.cells().iter().map(|c| c.index()).collect();
    seq.sort_by_key(|&i| ordering.rank_of(CellId::new(i)).expect("validated cell"));
    let pos = seq
        .iter()
        .position(|&i| i == x.index())
        .expect("x is a delta-set member");

    // beats(best, diam, len): would a satisfying window of this shape improve?
    let improves = |best: &Option<Candidate>, diam: f64, len: usize| match best {
        None => true,
        Some(b) => diam < b.diameter || (diam == b.diameter && len < b.members.len()),
    };

    // base window [start..=pos], grown leftward; its diameter only increases
    // as start decreases, so a hopeless base prunes all remaining starts
    let mut base: Vec<usize> = vec![seq[pos]];
    let mut base_diam = 0.0f64;
    for start in (0..=pos).rev() {
        if start < pos {
            let added = seq[start];
            for &m in &base {
                base_diam = base_diam.max(map.d(added, m));
            }
            base.insert(0, added);
        }
        if !improves(best, base_diam, base.len()) && best.is_some() {
            break;
        }
        // extend the right edge; diameter is again non-decreasing in end
        let mut window = base.clone();
        let mut diam = base_diam;
        for end in pos..seq.len() {
            if end > pos {
                let added = seq[end];
                for &m in &window {
                    diam = diam.max(map.d(added, m));
                }
                window.push(added);
            }
            if !improves(best, diam, window.len()) {
                break;
            }
            if diam < threshold {
                continue; // E <= diameter, cannot qualify yet
            }
            let cells: Vec<CellId> = window.iter().map(|&i| CellId::new(i)).collect();
            let error = prior_weighted_error(&cells, prior, map)?;
            if error >= threshold {
                *best = Some(Candidate {
                    members: window.clone(),
                    diameter: diam,
                    error,
                    rotation: ordering.rotation(),
                });
            }
        }
    }
    Ok(())
}
