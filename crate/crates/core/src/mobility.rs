//! Mobility model: transition matrices, temporally correlated belief
//! propagation, delta-location sets, and the surrogate-location rule.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};

/// Priors below this are treated as zero when building location sets.
pub const ZERO_MASS_EPS: f64 = 1e-12;

/// Tolerance for "sums to one" checks on probability vectors and matrix rows.
pub const MASS_TOL: f64 = 1e-12;

/// Raw movement counts between cells; row i holds departures from cell i.
#[derive(Debug, Clone)]
pub struct TransitionCounts {
    n: usize,
    entries: Vec<f64>,
}

impl TransitionCounts {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty transition count matrix".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "count row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for &v in row {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "count entries must be finite and nonnegative, got {v} in row {i}"
                    )));
                }
                entries.push(v);
            }
        }
        Ok(TransitionCounts { n, entries })
    }

    /// Parses a whitespace-separated matrix: one row per line, blank lines
    /// and `#` comment lines ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| Error::InvalidInput(format!("bad matrix entry: {e}")))?);
        }
        Self::from_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

/// Row-stochastic transition probability matrix.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let counts = TransitionCounts::from_rows(rows)?;
        let n = counts.n;
        for i in 0..n {
            let sum: f64 = counts.row(i).iter().sum();
            if (sum - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidInput(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
            if counts.row(i).iter().any(|&v| v > 1.0) {
                return Err(Error::InvalidInput(format!(
                    "transition row {i} has an entry above 1"
                )));
            }
        }
        Ok(TransitionMatrix {
            n,
            entries: counts.entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        TransitionMatrix { n, entries }
    }

    /// Lazy random-walk matrix on the grid: from each cell the user stays
    /// with weight `stay_weight` and moves to each existing 4-neighbor with
    /// weight `step_weight`; rows are normalized over the weights present.
    pub fn random_walk(map: &GridMap, stay_weight: f64, step_weight: f64) -> Result<Self> {
        if !(stay_weight >= 0.0) || !(step_weight >= 0.0) || stay_weight + step_weight == 0.0 {
            return Err(Error::InvalidInput(
                "random walk weights must be nonnegative and not both zero".into(),
            ));
        }
        let n = map.n();
        let (w, h) = (map.width(), map.height());
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let (col, row) = (i % w, i / w);
            let mut weights: Vec<(usize, f64)> = vec![(i, stay_weight)];
            if col > 0 {
                weights.push((i - 1, step_weight));
            }
            if col + 1 < w {
                weights.push((i + 1, step_weight));
            }
            if row > 0 {
                weights.push((i - w, step_weight));
            }
            if row + 1 < h {
                weights.push((i + w, step_weight));
            }
            let total: f64 = weights.iter().map(|&(_, v)| v).sum();
            for (j, v) in weights {
                entries[i * n + j] = v / total;
            }
        }
        Ok(TransitionMatrix { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

/// Normalizes raw counts into a row-stochastic matrix.
///
/// All-zero rows become self-loops; their indices are reported alongside the
/// matrix so callers can warn about them.
pub fn normalize_counts(counts: &TransitionCounts) -> (TransitionMatrix, Vec<usize>) {
    let n = counts.n();
    let mut entries = vec![0.0; n * n];
    let mut self_loop_rows = Vec::new();
    for i in 0..n {
        let row = counts.row(i);
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            entries[i * n + i] = 1.0;
            self_loop_rows.push(i);
        } else {
            for (j, &v) in row.iter().enumerate() {
                entries[i * n + j] = v / sum;
            }
        }
    }
    (TransitionMatrix { n, entries }, self_loop_rows)
}

/// Whether a belief is a pre-observation prior or a post-observation posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefRole {
    Prior,
    Posterior,
}

/// A probability distribution over cells at one time step.
#[derive(Debug, Clone)]
pub struct BeliefVector {
    probs: Vec<f64>,
    role: BeliefRole,
    time: usize,
}

impl BeliefVector {
    pub fn new(probs: Vec<f64>, role: BeliefRole, time: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty belief vector".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "belief entries must be finite and nonnegative, got {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!(
                "belief mass is {sum}, expected 1 within {MASS_TOL}"
            )));
        }
        Ok(BeliefVector { probs, role, time })
    }

    /// Builds a belief by normalizing nonnegative weights.
    pub fn from_weights(weights: Vec<f64>, role: BeliefRole, time: usize) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidInput(format!(
                "belief weights must have positive finite total, got {sum}"
            )));
        }
        let probs = weights.into_iter().map(|w| w / sum).collect();
        Self::new(probs, role, time)
    }

    /// Uniform distribution over the given support cells.
    pub fn uniform_over(n: usize, support: &[CellId], role: BeliefRole, time: usize) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("empty belief support".into()));
        }
        let mut weights = vec![0.0; n];
        for &c in support {
            if c.index() >= n {
                return Err(Error::CellOutOfRange { index: c.index(), n });
            }
            weights[c.index()] = 1.0;
        }
        Self::from_weights(weights, role, time)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, c: CellId) -> f64 {
        self.probs[c.index()]
    }

    pub fn role(&self) -> BeliefRole {
        self.role
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Restricts mass to the given cells and renormalizes.
    pub fn restricted_to(&self, cells: &[CellId]) -> Result<BeliefVector> {
        let mut weights = vec![0.0; self.len()];
        for &c in cells {
            if c.index() >= self.len() {
                return Err(Error::CellOutOfRange {
                    index: c.index(),
                    n: self.len(),
                });
            }
            weights[c.index()] = self.probs[c.index()];
        }
        Self::from_weights(weights, self.role, self.time)
    }
}

/// One-step belief propagation through the mobility model: `p_{t+1}^- = p_t^+ M`.
pub fn propagate_prior(posterior: &BeliefVector, m: &TransitionMatrix) -> Result<BeliefVector> {
    if posterior.role() != BeliefRole::Posterior {
        return Err(Error::InvalidInput(
            "propagate_prior expects a posterior belief".into(),
        ));
    }
    if posterior.len() != m.n() {
        return Err(Error::DimensionMismatch(format!(
            "belief has {} cells, transition matrix has {}",
            posterior.len(),
            m.n()
        )));
    }
    let n = m.n();
    let mut out = vec![0.0; n];
    for (i, &p) in posterior.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &mij) in m.row(i).iter().enumerate() {
            out[j] += p * mij;
        }
    }
    BeliefVector::new(out, BeliefRole::Prior, posterior.time() + 1)
}

/// The smallest set of cells whose prior mass reaches `1 - delta`.
#[derive(Debug, Clone)]
pub struct DeltaLocationSet {
    cells: Vec<CellId>,
    delta: f64,
    covered_mass: f64,
}

impl DeltaLocationSet {
    /// Member cells in ascending id order.
    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn covered_mass(&self) -> f64 {
        self.covered_mass
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: CellId) -> bool {
        self.cells.binary_search(&c).is_ok()
    }
}

/// Greedy construction of the delta-location set: cells sorted by prior
/// descending (ties by ascending id) are accumulated until the mass reaches
/// `1 - delta`. Cells with effectively zero prior are never included.
pub fn delta_location_set(prior: &BeliefVector, delta: f64) -> Result<DeltaLocationSet> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mut order: Vec<usize> = (0..prior.len())
        .filter(|&i| prior.probs()[i] >= ZERO_MASS_EPS)
        .collect();
    order.sort_by(|&a, &b| {
        prior.probs()[b]
            .partial_cmp(&prior.probs()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let target = 1.0 - delta;
    let mut cells = Vec::new();
    let mut mass = 0.0;
    for i in order {
        cells.push(CellId::new(i));
        mass += prior.probs()[i];
        if mass >= target {
            break;
        }
    }
    cells.sort_unstable();
    Ok(DeltaLocationSet {
        cells,
        delta,
        covered_mass: mass,
    })
}

/// Nearest in-set stand-in for a location that fell outside the set.
/// Returns `x` itself when it is a member; ties go to the lowest cell id.
pub fn surrogate(x: CellId, set: &DeltaLocationSet, map: &GridMap) -> Result<CellId> {
    if set.is_empty() {
        return Err(Error::InvalidInput(
            "cannot pick a surrogate from an empty location set".into(),
        ));
    }
    map.check_cell(x)?;
    if set.contains(x) {
        return Ok(x);
    }
    let mut best = set.cells()[0];
    let mut best_d = map.d(x.index(), best.index());
    for &c in &set.cells()[1..] {
        let d = map.d(x.index(), c.index());
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_counts_examples() {
        let counts = TransitionCounts::from_rows(vec![
            vec![1.0, 1.0, 2.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0],
        ])
        .unwrap();
        let (m, zero_rows) = normalize_counts(&counts);
        assert_eq!(m.row(0), &[0.25, 0.25, 0.5]);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]); // declared degenerate-input rule
        assert_eq!(m.row(2), &[0.0, 1.0, 0.0]);
        assert_eq!(zero_rows, vec![1]);
    }

    #[test]
    fn identity_counts_normalize_to_identity() {
        let counts = TransitionCounts::from_rows(vec![
            vec![2.0, 0.0],
            vec![0.0, 7.0],
        ])
        .unwrap();
        let (m, zero_rows) = normalize_counts(&counts);
        assert!(zero_rows.is_empty());
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn counts_parse_from_text() {
        let counts = TransitionCounts::from_text("# comment\n1 2\n3 4\n").unwrap();
        assert_eq!(counts.row(0), &[1.0, 2.0]);
        assert_eq!(counts.row(1), &[3.0, 4.0]);
        assert!(TransitionCounts::from_text("1 2\n3\n").is_err());
        assert!(TransitionCounts::from_text("1 -2\n3 4\n").is_err());
    }

    #[test]
    fn propagate_prior_examples() {
        let ident = TransitionMatrix::identity(2);
        let p = BeliefVector::new(vec![1.0, 0.0], BeliefRole::Posterior, 1).unwrap();
        let out = propagate_prior(&p, &ident).unwrap();
        assert_eq!(out.probs(), &[1.0, 0.0]);
        assert_eq!(out.role(), BeliefRole::Prior);
        assert_eq!(out.time(), 2);

        // doubly stochastic keeps uniform stationary
        let ds = TransitionMatrix::from_rows(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
        let u = BeliefVector::new(vec![0.5, 0.5], BeliefRole::Posterior, 0).unwrap();
        let out = propagate_prior(&u, &ds).unwrap();
        assert_relative_eq!(out.probs()[0], 0.5, epsilon = 1e-15);

        // hand-computed vector-matrix product
        let m = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let p = BeliefVector::new(vec![0.2, 0.8], BeliefRole::Posterior, 3).unwrap();
        let out = propagate_prior(&p, &m).unwrap();
        assert_relative_eq!(out.probs()[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(out.probs()[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn propagate_prior_rejects_bad_input() {
        let m = TransitionMatrix::identity(2);
        let prior = BeliefVector::new(vec![0.5, 0.5], BeliefRole::Prior, 0).unwrap();
        assert!(propagate_prior(&prior, &m).is_err());
        let p3 = BeliefVector::new(vec![0.5, 0.25, 0.25], BeliefRole::Posterior, 0).unwrap();
        assert!(matches!(
            propagate_prior(&p3, &m),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn delta_set_examples() {
        let p = BeliefVector::new(vec![0.5, 0.3, 0.2], BeliefRole::Prior, 1).unwrap();
        let set = delta_location_set(&p, 0.3).unwrap();
        assert_eq!(set.cells(), &[CellId::new(0), CellId::new(1)]);
        assert!(set.covered_mass() >= 0.7);

        let one_hot = BeliefVector::new(vec![0.0, 1.0, 0.0], BeliefRole::Prior, 1).unwrap();
        for delta in [0.01, 0.5, 0.99] {
            let set = delta_location_set(&one_hot, delta).unwrap();
            assert_eq!(set.cells(), &[CellId::new(1)]);
        }

        // uniform over 4 cells, delta = 0.5: tie rule keeps the two lowest ids
        let u = BeliefVector::new(vec![0.25; 4], BeliefRole::Prior, 1).unwrap();
        let set = delta_location_set(&u, 0.5).unwrap();
        assert_eq!(set.cells(), &[CellId::new(0), CellId::new(1)]);
    }

    #[test]
    fn delta_set_excludes_zero_mass_cells() {
        let p = BeliefVector::new(vec![0.5, 0.5, 0.0], BeliefRole::Prior, 1).unwrap();
        let set = delta_location_set(&p, 0.001).unwrap();
        assert!(!set.contains(CellId::new(2)));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn surrogate_examples() {
        let map = GridMap::new(4, 1, 5.0).unwrap();
        let prior = BeliefVector::new(vec![0.0, 0.5, 0.0, 0.5], BeliefRole::Prior, 1).unwrap();
        let set = delta_location_set(&prior, 0.2).unwrap();
        // member stays itself
        assert_eq!(surrogate(CellId::new(1), &set, &map).unwrap(), CellId::new(1));
        // cell 0 is 5 km from member 1 and 15 km from member 3
        assert_eq!(surrogate(CellId::new(0), &set, &map).unwrap(), CellId::new(1));
        // cell 2 is equidistant from members 1 and 3: lowest id wins
        assert_eq!(surrogate(CellId::new(2), &set, &map).unwrap(), CellId::new(1));
    }

    proptest! {
        #[test]
        fn propagation_preserves_mass_and_nonnegativity(
            weights in proptest::collection::vec(0.0f64..1.0, 4),
            rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 4),
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let p = BeliefVector::from_weights(weights, BeliefRole::Posterior, 0).unwrap();
            let m_rows: Vec<Vec<f64>> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let m = TransitionMatrix::from_rows(m_rows).unwrap();
            let out = propagate_prior(&p, &m).unwrap();
            // constructor enforces mass 1 within 1e-12 and nonnegativity
            prop_assert_eq!(out.len(), 4);
        }

        #[test]
        fn delta_set_is_minimal_and_monotone(
            weights in proptest::collection::vec(0.0f64..1.0, 8),
            delta in 0.01f64..0.9,
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let p = BeliefVector::from_weights(weights, BeliefRole::Prior, 0).unwrap();
            let set = delta_location_set(&p, delta).unwrap();
            prop_assert!(set.covered_mass() >= 1.0 - delta - 1e-12);
            // dropping the smallest-prior member must fall below the target,
            // unless the set exists only to soak up every nonzero cell
            let smallest = set
                .cells()
                .iter()
                .map(|&c| p.get(c))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(
                set.covered_mass() - smallest < 1.0 - delta + 1e-9,
                "delta set is not minimal"
            );
            // shrinking delta never shrinks the set
            let tighter = delta_location_set(&p, delta * 0.5).unwrap();
            for &c in set.cells() {
                prop_assert!(tighter.contains(c));
            }
        }

        #[test]
        fn surrogate_lands_in_set(
            weights in proptest::collection::vec(0.0f64..1.0, 12),
            x in 0usize..12,
            delta in 0.05f64..0.5,
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let map = GridMap::new(4, 3, 1.0).unwrap();
            let p = BeliefVector::from_weights(weights, BeliefRole::Prior, 0).unwrap();
            let set = delta_location_set(&p, delta).unwrap();
            let s = surrogate(CellId::new(x), &set, &map).unwrap();
            prop_assert!(set.contains(s));
            if set.contains(CellId::new(x)) {
                prop_assert_eq!(s, CellId::new(x));
            }
        }
    }
}
