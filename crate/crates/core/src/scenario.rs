//! Experiment scenario configuration: grid, mobility source, initial belief,
//! trajectory, privacy parameters, and sweep/comparison settings, loadable
//! from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::{
    normalize_counts, BeliefRole, BeliefVector, TransitionCounts, TransitionMatrix,
};
use crate::perturb::MechanismKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size_km: f64,
}

/// Where the transition matrix comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionConfig {
    /// Whitespace-separated count matrix in a text file; rows are normalized,
    /// all-zero rows become self-loops.
    File { path: PathBuf },
    /// Synthetic lazy random walk: stay with `stay_weight`, move to each
    /// existing 4-neighbor with `step_weight`.
    RandomWalk { stay_weight: f64, step_weight: f64 },
}

/// Initial belief over the user's location at the first time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    /// Uniform over the whole map.
    Uniform,
    /// Uniform over the square of cells within `radius` rows/columns of
    /// `center`, clipped to the map.
    UniformBox { center: usize, radius: usize },
    /// All mass on one cell.
    Point { cell: usize },
    /// Explicit nonnegative weights, one per cell, normalized.
    Weights { weights: Vec<f64> },
}

/// Budget/threshold grids for the sweep subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub e_ms_km: Vec<f64>,
}

/// Settings for the equal-QoS mechanism comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareConfig {
    pub qos_targets_km: Vec<f64>,
    /// Bisection bracket for the budget solve.
    pub epsilon_bracket: [f64; 2],
    /// Replications per solver evaluation; defaults to the scenario's `reps`.
    pub reps: Option<usize>,
}

fn default_name() -> String {
    "default".into()
}

fn default_mechanism() -> MechanismKind {
    MechanismKind::PermuteAndFlip
}

fn default_reps() -> usize {
    100
}

/// Full description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub grid: GridConfig,
    pub transition: TransitionConfig,
    pub initial_prior: PriorConfig,
    /// True location at each time step, as cell indices.
    pub trajectory: Vec<usize>,
    pub epsilon: f64,
    pub e_m_km: f64,
    pub delta: f64,
    #[serde(default = "default_mechanism")]
    pub mechanism: MechanismKind,
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
}

impl ScenarioConfig {
    /// The built-in 10x10 scenario: 5 km cells, a 5-step trajectory through
    /// the middle of the map, a lazy random walk (stay weight 4, step weight
    /// 1), and a uniform initial belief over the 3x3 box around the starting
    /// cell.
    pub fn default_scenario() -> Self {
        ScenarioConfig {
            name: "default".into(),
            grid: GridConfig {
                width: 10,
                height: 10,
                cell_size_km: 5.0,
            },
            transition: TransitionConfig::RandomWalk {
                stay_weight: 4.0,
                step_weight: 1.0,
            },
            initial_prior: PriorConfig::UniformBox {
                center: 44,
                radius: 1,
            },
            trajectory: vec![44, 45, 55, 65, 66],
            epsilon: 1.0,
            e_m_km: 2.0,
            delta: 0.05,
            mechanism: MechanismKind::PermuteAndFlip,
            seed: 42,
            reps: 100,
            sweep: None,
            compare: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad scenario file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let map = self.map()?;
        if self.trajectory.is_empty() {
            return Err(Error::Config("trajectory must have at least one step".into()));
        }
        for &c in &self.trajectory {
            map.check_cell(CellId::new(c))
                .map_err(|_| Error::Config(format!("trajectory cell {c} outside the map")))?;
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.e_m_km >= 0.0) || !self.e_m_km.is_finite() {
            return Err(Error::Config(format!(
                "e_m_km must be nonnegative, got {}",
                self.e_m_km
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        match &self.transition {
            TransitionConfig::RandomWalk {
                stay_weight,
                step_weight,
            } => {
                if !(*stay_weight >= 0.0) || !(*step_weight >= 0.0)
                    || stay_weight + step_weight == 0.0
                {
                    return Err(Error::Config(
                        "random walk weights must be nonnegative and not both zero".into(),
                    ));
                }
            }
            TransitionConfig::File { .. } => {}
        }
        match &self.initial_prior {
            PriorConfig::Uniform => {}
            PriorConfig::UniformBox { center, .. } => {
                map.check_cell(CellId::new(*center))
                    .map_err(|_| Error::Config(format!("prior center {center} outside the map")))?;
            }
            PriorConfig::Point { cell } => {
                map.check_cell(CellId::new(*cell))
                    .map_err(|_| Error::Config(format!("prior cell {cell} outside the map")))?;
            }
            PriorConfig::Weights { weights } => {
                if weights.len() != map.n() {
                    return Err(Error::Config(format!(
                        "prior has {} weights, map has {} cells",
                        weights.len(),
                        map.n()
                    )));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.epsilons.is_empty() || sweep.e_ms_km.is_empty() {
                return Err(Error::Config("sweep lists must be nonempty".into()));
            }
        }
        if let Some(cmp) = &self.compare {
            if cmp.qos_targets_km.is_empty() {
                return Err(Error::Config("compare needs at least one QoS target".into()));
            }
            if !(cmp.epsilon_bracket[0] > 0.0 && cmp.epsilon_bracket[1] > cmp.epsilon_bracket[0]) {
                return Err(Error::Config(format!(
                    "bad epsilon bracket {:?}",
                    cmp.epsilon_bracket
                )));
            }
            if cmp.reps == Some(0) {
                return Err(Error::Config("compare reps must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn map(&self) -> Result<GridMap> {
        GridMap::new(self.grid.width, self.grid.height, self.grid.cell_size_km)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the transition matrix, reporting any all-zero count rows that
    /// were turned into self-loops.
    pub fn transition_matrix(&self, map: &GridMap) -> Result<(TransitionMatrix, Vec<usize>)> {
        match &self.transition {
            TransitionConfig::RandomWalk {
                stay_weight,
                step_weight,
            } => Ok((
                TransitionMatrix::random_walk(map, *stay_weight, *step_weight)?,
                Vec::new(),
            )),
            TransitionConfig::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let counts = TransitionCounts::from_text(&text)?;
                if counts.n() != map.n() {
                    return Err(Error::Config(format!(
                        "transition matrix is {0}x{0}, map has {1} cells",
                        counts.n(),
                        map.n()
                    )));
                }
                Ok(normalize_counts(&counts))
            }
        }
    }

    /// Builds the initial prior belief (time step 1).
    pub fn initial_prior(&self, map: &GridMap) -> Result<BeliefVector> {
        match &self.initial_prior {
            PriorConfig::Uniform => {
                let all: Vec<CellId> = (0..map.n()).map(CellId::new).collect();
                BeliefVector::uniform_over(map.n(), &all, BeliefRole::Prior, 1)
            }
            PriorConfig::UniformBox { center, radius } => {
                let (cc, cr) = map.col_row(CellId::new(*center));
                let mut support = Vec::new();
                for row in cr.saturating_sub(*radius)..=(cr + radius).min(map.height() - 1) {
                    for col in cc.saturating_sub(*radius)..=(cc + radius).min(map.width() - 1) {
                        support.push(map.cell_at(col, row)?);
                    }
                }
                BeliefVector::uniform_over(map.n(), &support, BeliefRole::Prior, 1)
            }
            PriorConfig::Point { cell } => {
                BeliefVector::uniform_over(map.n(), &[CellId::new(*cell)], BeliefRole::Prior, 1)
            }
            PriorConfig::Weights { weights } => {
                BeliefVector::from_weights(weights.clone(), BeliefRole::Prior, 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        let cfg = ScenarioConfig::default_scenario();
        cfg.validate().unwrap();
        let map = cfg.map().unwrap();
        assert_eq!(map.n(), 100);
        // trajectory steps move between adjacent cells
        for pair in cfg.trajectory.windows(2) {
            let d = map
                .distance(CellId::new(pair[0]), CellId::new(pair[1]))
                .unwrap();
            assert_eq!(d, 5.0);
        }
        // 3x3 initial support
        let prior = cfg.initial_prior(&map).unwrap();
        let support = prior.probs().iter().filter(|&&p| p > 0.0).count();
        assert_eq!(support, 9);
        assert!(prior.get(CellId::new(44)) > 0.0);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::default_scenario();
        let text = cfg.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back.trajectory, cfg.trajectory);
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.mechanism, cfg.mechanism);
    }

    #[test]
    fn parses_handwritten_config() {
        let text = r#"
            name = "tiny"
            trajectory = [0, 1]
            epsilon = 0.5
            e_m_km = 1.0
            delta = 0.1
            seed = 7

            [grid]
            width = 2
            height = 2
            cell_size_km = 1.0

            [transition]
            kind = "random_walk"
            stay_weight = 1.0
            step_weight = 1.0

            [initial_prior]
            kind = "point"
            cell = 0
        "#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.name, "tiny");
        assert_eq!(cfg.reps, 100); // default
        assert_eq!(cfg.mechanism, MechanismKind::PermuteAndFlip); // default
        let map = cfg.map().unwrap();
        let prior = cfg.initial_prior(&map).unwrap();
        assert_eq!(prior.get(CellId::new(0)), 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.trajectory = vec![];
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default_scenario();
        cfg.trajectory = vec![150];
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default_scenario();
        cfg.delta = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default_scenario();
        cfg.reps = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default_scenario();
        cfg.initial_prior = PriorConfig::Weights {
            weights: vec![1.0; 5],
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn uniform_box_clips_at_edges() {
        let cfg = ScenarioConfig {
            initial_prior: PriorConfig::UniformBox {
                center: 0,
                radius: 1,
            },
            ..ScenarioConfig::default_scenario()
        };
        let map = cfg.map().unwrap();
        let prior = cfg.initial_prior(&map).unwrap();
        let support = prior.probs().iter().filter(|&&p| p > 0.0).count();
        assert_eq!(support, 4); // corner 2x2
    }

    #[test]
    fn transition_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.txt");
        std::fs::write(&path, "# 2x2 grid flattened\n1 1 0 0\n0 2 2 0\n0 0 0 0\n1 0 0 1\n")
            .unwrap();
        let cfg = ScenarioConfig {
            grid: GridConfig {
                width: 2,
                height: 2,
                cell_size_km: 1.0,
            },
            transition: TransitionConfig::File { path },
            initial_prior: PriorConfig::Uniform,
            trajectory: vec![0],
            ..ScenarioConfig::default_scenario()
        };
        cfg.validate().unwrap();
        let map = cfg.map().unwrap();
        let (m, zero_rows) = cfg.transition_matrix(&map).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(zero_rows, vec![2]);
    }
}
