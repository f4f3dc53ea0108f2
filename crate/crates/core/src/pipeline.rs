//! End-to-end per-trajectory pipeline, replication seeding, sweeps, the
//! equal-QoS mechanism comparison, and CSV serialization.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::adversary::{self, AttackStrategy};
use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap, HilbertOrdering};
use crate::metrics::{
    privacy_metric, qos_loss, solve_epsilon_for_qos_with_tol, StepMetrics, QOS_SOLVE_REL_TOL,
};
use crate::mobility::{
    delta_location_set, propagate_prior, surrogate, BeliefVector, TransitionMatrix,
};
use crate::perturb::{MechanismFamily, MechanismKind, PerturbationModel};
use crate::pls::{search_pls_with_orderings, PrivacyParams};
use crate::scenario::ScenarioConfig;

/// A scenario compiled into its runtime pieces: map, mobility model, initial
/// belief, and the shared Hilbert orderings.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub map: GridMap,
    pub transition: TransitionMatrix,
    pub initial_prior: BeliefVector,
    pub orderings: [HilbertOrdering; 4],
    /// Transition-count rows that were all zero and became self-loops.
    pub self_loop_rows: Vec<usize>,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let map = config.map()?;
        let (transition, self_loop_rows) = config.transition_matrix(&map)?;
        let initial_prior = config.initial_prior(&map)?;
        let orderings = map.hilbert_orderings();
        Ok(Scenario {
            config,
            map,
            transition,
            initial_prior,
            orderings,
            self_loop_rows,
        })
    }
}

/// Per-point run settings, overriding the scenario's own epsilon/threshold.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub epsilon: f64,
    pub e_m_km: f64,
    pub mechanism: MechanismKind,
    /// Keep the per-step beliefs, mechanism model, and attack strategy in the
    /// run record so consumers can recompute every metric from the output.
    pub collect_detail: bool,
}

impl RunSettings {
    pub fn from_scenario(s: &Scenario) -> Self {
        RunSettings {
            epsilon: s.config.epsilon,
            e_m_km: s.config.e_m_km,
            mechanism: s.config.mechanism,
            collect_detail: false,
        }
    }
}

/// Everything needed to recompute a step's metrics from the record alone.
#[derive(Debug, Clone)]
pub struct StepDetail {
    /// Prior restricted to the plausible-location set and renormalized.
    pub restricted_prior: BeliefVector,
    /// Attacker posterior after the realized observation.
    pub posterior: BeliefVector,
    /// The attacker's model of the mechanism: one pmf per plausible cell.
    pub family: MechanismFamily,
    pub strategy: AttackStrategy,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub true_cell: CellId,
    /// The (possibly surrogate) cell the mechanism actually protected.
    pub protected_cell: CellId,
    pub released_cell: CellId,
    pub metrics: StepMetrics,
    pub detail: Option<StepDetail>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rep: u64,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    pub fn mean_privacy_km(&self) -> f64 {
        self.steps.iter().map(|s| s.metrics.privacy_km).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_qos_km(&self) -> f64 {
        self.steps.iter().map(|s| s.metrics.qos_km).sum::<f64>() / self.steps.len() as f64
    }
}

/// Replication RNG: a ChaCha stream keyed on the master seed and the
/// replication counter, so replications never share randomness.
pub fn rep_rng(master_seed: u64, rep: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&rep.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Runs one seeded replication of the whole trajectory.
///
/// Per step: build the plausible-location set from the current prior, stand
/// in a surrogate if the true cell fell outside it, search the protection
/// set, build the mechanism pmfs for every plausible cell, release a
/// perturbed location, run the Bayes attacker, record metrics, and propagate
/// the posterior through the mobility model.
pub fn run_replication(scn: &Scenario, settings: &RunSettings, rep: u64) -> Result<RunRecord> {
    let map = &scn.map;
    let params = PrivacyParams::new(settings.epsilon, settings.e_m_km, scn.config.delta)?;
    let mut rng = rep_rng(scn.config.seed, rep);
    let mut belief = scn.initial_prior.clone();
    let mut steps = Vec::with_capacity(scn.config.trajectory.len());

    for &true_idx in &scn.config.trajectory {
        let true_cell = CellId::new(true_idx);
        let dls = delta_location_set(&belief, scn.config.delta)?;
        let protected = surrogate(true_cell, &dls, map)?;
        let restricted = belief.restricted_to(dls.cells())?;

        // the attacker's model: each plausible cell gets the pmf the public
        // mechanism would use if it were the true one
        let mut family = MechanismFamily::new(map.n());
        let mut release_model = None;
        let mut diameter_km = 0.0;
        let mut fallback = false;
        let mut degenerate = false;
        for &y in dls.cells() {
            let pls = search_pls_with_orderings(y, &dls, &restricted, &params, map, &scn.orderings)?;
            let model = PerturbationModel::new(settings.mechanism, y, &pls, settings.epsilon)?;
            let pmf = model.pmf(map)?;
            if y == protected {
                diameter_km = pls.diameter_km();
                fallback = pls.is_fallback();
                degenerate = pmf.is_degenerate();
                release_model = Some(model);
            }
            family.insert(y, pmf)?;
        }
        let release_model = release_model.expect("protected cell is a member of the delta set");
        let released = release_model.sample(map, &mut rng)?;

        let strategy = AttackStrategy::optimal(&restricted, &family, map)?;
        let privacy_km = privacy_metric(&restricted, &family, &strategy, map)?;
        let qos_km = qos_loss(&restricted, &family, map)?;
        let posterior = adversary::posterior(&restricted, &family, released)?;
        let exper_km = adversary::expected_inference_error(&posterior, map);

        let metrics = StepMetrics {
            time: belief.time(),
            privacy_km,
            qos_km,
            diameter_km,
            exper_km,
            surrogate_used: protected != true_cell,
            fallback_pls: fallback,
            degenerate_mechanism: degenerate,
        };
        let detail = settings.collect_detail.then(|| StepDetail {
            restricted_prior: restricted.clone(),
            posterior: posterior.clone(),
            family: family.clone(),
            strategy: strategy.clone(),
        });
        steps.push(StepRecord {
            true_cell,
            protected_cell: protected,
            released_cell: released,
            metrics,
            detail,
        });

        belief = propagate_prior(&posterior, &scn.transition)?;
    }
    Ok(RunRecord { rep, steps })
}

/// Replication-level means with their standard errors.
#[derive(Debug, Clone, Copy)]
pub struct PointSummary {
    pub mean_p_km: f64,
    pub mean_q_km: f64,
    pub se_p_km: f64,
    pub se_q_km: f64,
    pub reps: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One evaluated point: all replications plus their summary.
pub struct PointResult {
    pub records: Vec<RunRecord>,
    pub summary: PointSummary,
}

/// Runs `reps` independent replications of a point in parallel; the result
/// order is deterministic (sorted by replication counter).
pub fn run_point(scn: &Scenario, settings: &RunSettings, reps: usize) -> Result<PointResult> {
    let mut records = (0..reps as u64)
        .into_par_iter()
        .map(|rep| run_replication(scn, settings, rep))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.rep);
    let ps: Vec<f64> = records.iter().map(|r| r.mean_privacy_km()).collect();
    let qs: Vec<f64> = records.iter().map(|r| r.mean_qos_km()).collect();
    let (mean_p_km, se_p_km) = mean_and_se(&ps);
    let (mean_q_km, se_q_km) = mean_and_se(&qs);
    Ok(PointResult {
        records,
        summary: PointSummary {
            mean_p_km,
            mean_q_km,
            se_p_km,
            se_q_km,
            reps,
        },
    })
}

/// One sweep grid point and its outcome.
pub struct SweepPoint {
    pub epsilon: f64,
    pub e_m_km: f64,
    pub result: PointResult,
}

/// Evaluates the full cross product of budgets and thresholds.
pub fn sweep(
    scn: &Scenario,
    epsilons: &[f64],
    e_ms_km: &[f64],
    mechanism: MechanismKind,
    reps: usize,
) -> Result<Vec<SweepPoint>> {
    if epsilons.is_empty() || e_ms_km.is_empty() {
        return Err(Error::InvalidInput("sweep lists must be nonempty".into()));
    }
    let mut points = Vec::new();
    for &epsilon in epsilons {
        for &e_m_km in e_ms_km {
            let settings = RunSettings {
                epsilon,
                e_m_km,
                mechanism,
                collect_detail: false,
            };
            points.push(SweepPoint {
                epsilon,
                e_m_km,
                result: run_point(scn, &settings, reps)?,
            });
        }
    }
    Ok(points)
}

/// One side of an equal-QoS comparison.
#[derive(Debug, Clone, Copy)]
pub struct SolvedSide {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub summary: PointSummary,
}

/// Result for one QoS target: both mechanisms tuned to the same QoS loss.
#[derive(Debug, Clone, Copy)]
pub struct CompareOutcome {
    pub target_q_km: f64,
    pub pf: SolvedSide,
    pub baseline: SolvedSide,
    /// `(p_pf - p_baseline) / p_baseline`.
    pub relative_privacy_gain: f64,
}

fn solve_side(
    scn: &Scenario,
    mechanism: MechanismKind,
    target_q: f64,
    bracket: [f64; 2],
    reps: usize,
    rel_tol: f64,
) -> Result<SolvedSide> {
    let solved = solve_epsilon_for_qos_with_tol(target_q, bracket[0], bracket[1], rel_tol, |epsilon| {
        let settings = RunSettings {
            epsilon,
            e_m_km: scn.config.e_m_km,
            mechanism,
            collect_detail: false,
        };
        Ok(run_point(scn, &settings, reps)?.summary.mean_q_km)
    })?;
    let settings = RunSettings {
        epsilon: solved.epsilon,
        e_m_km: scn.config.e_m_km,
        mechanism,
        collect_detail: false,
    };
    let summary = run_point(scn, &settings, reps)?.summary;
    Ok(SolvedSide {
        mechanism,
        epsilon: solved.epsilon,
        summary,
    })
}

/// For each target QoS loss, solves the budget separately for permute-and-
/// flip and the exponential baseline and reports both privacy levels.
/// Unsolvable targets are reported as errors alongside the successes.
pub fn compare_equal_qos(
    scn: &Scenario,
    targets_q_km: &[f64],
    bracket: [f64; 2],
    reps: usize,
) -> Vec<(f64, Result<CompareOutcome>)> {
    compare_equal_qos_with_tol(scn, targets_q_km, bracket, reps, QOS_SOLVE_REL_TOL)
}

/// As [`compare_equal_qos`] with an explicit solve tolerance; tighter
/// tolerances make the two sides' achieved QoS losses more comparable at the
/// cost of extra bisection evaluations.
pub fn compare_equal_qos_with_tol(
    scn: &Scenario,
    targets_q_km: &[f64],
    bracket: [f64; 2],
    reps: usize,
    rel_tol: f64,
) -> Vec<(f64, Result<CompareOutcome>)> {
    targets_q_km
        .iter()
        .map(|&target| {
            let outcome = (|| {
                let pf = solve_side(
                    scn,
                    MechanismKind::PermuteAndFlip,
                    target,
                    bracket,
                    reps,
                    rel_tol,
                )?;
                let baseline = solve_side(
                    scn,
                    MechanismKind::ExponentialBaseline,
                    target,
                    bracket,
                    reps,
                    rel_tol,
                )?;
                let relative_privacy_gain = (pf.summary.mean_p_km - baseline.summary.mean_p_km)
                    / baseline.summary.mean_p_km;
                Ok(CompareOutcome {
                    target_q_km: target,
                    pf,
                    baseline,
                    relative_privacy_gain,
                })
            })();
            (target, outcome)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "scenario,mechanism,epsilon,e_m,delta,seed,step,p_km,q_km,diameter_km,exper_km,flags";

/// Nine significant digits, scientific notation, locale-independent.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

fn row(
    scenario: &str,
    mechanism: MechanismKind,
    epsilon: f64,
    e_m_km: f64,
    delta: f64,
    seed: u64,
    step: &str,
    p: f64,
    q: f64,
    diameter: f64,
    exper: f64,
    flags: &str,
) -> String {
    format!(
        "{scenario},{mech},{eps},{em},{delta},{seed},{step},{p},{q},{d},{e},{flags}",
        mech = mechanism.label(),
        eps = num(epsilon),
        em = num(e_m_km),
        delta = num(delta),
        p = num(p),
        q = num(q),
        d = num(diameter),
        e = num(exper),
    )
}

/// Per-step rows for one replication. The seed column holds the replication
/// counter; combined with the scenario's master seed it reproduces the run.
pub fn record_rows(
    scenario: &str,
    settings: &RunSettings,
    delta: f64,
    record: &RunRecord,
) -> Vec<String> {
    record
        .steps
        .iter()
        .map(|s| {
            row(
                scenario,
                settings.mechanism,
                settings.epsilon,
                settings.e_m_km,
                delta,
                record.rep,
                &s.metrics.time.to_string(),
                s.metrics.privacy_km,
                s.metrics.qos_km,
                s.metrics.diameter_km,
                s.metrics.exper_km,
                &s.metrics.flags(),
            )
        })
        .collect()
}

/// The aggregate row for one point: replication means, step column "avg",
/// seed column holding the master seed.
pub fn aggregate_row(
    scenario: &str,
    settings: &RunSettings,
    delta: f64,
    master_seed: u64,
    summary: &PointSummary,
) -> String {
    row(
        scenario,
        settings.mechanism,
        settings.epsilon,
        settings.e_m_km,
        delta,
        master_seed,
        "avg",
        summary.mean_p_km,
        summary.mean_q_km,
        0.0,
        0.0,
        "",
    )
}

/// Full CSV document for one point: header, per-step rows, aggregate row.
pub fn point_csv(scn: &Scenario, settings: &RunSettings, result: &PointResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for record in &result.records {
        for line in record_rows(&scn.config.name, settings, scn.config.delta, record) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out.push_str(&aggregate_row(
        &scn.config.name,
        settings,
        scn.config.delta,
        scn.config.seed,
        &result.summary,
    ));
    out.push('\n');
    out
}

/// Full CSV document for a sweep: aggregate row per grid point.
pub fn sweep_csv(scn: &Scenario, mechanism: MechanismKind, points: &[SweepPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let settings = RunSettings {
            epsilon: p.epsilon,
            e_m_km: p.e_m_km,
            mechanism,
            collect_detail: false,
        };
        out.push_str(&aggregate_row(
            &scn.config.name,
            &settings,
            scn.config.delta,
            scn.config.seed,
            &p.result.summary,
        ));
        out.push('\n');
    }
    out
}

/// CSV for the equal-QoS comparison: one aggregate row per solved side, with
/// the target and relative difference in the flags column.
pub fn compare_csv(scn: &Scenario, outcomes: &[(f64, Result<CompareOutcome>)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (target, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                for side in [&o.pf, &o.baseline] {
                    let settings = RunSettings {
                        epsilon: side.epsilon,
                        e_m_km: scn.config.e_m_km,
                        mechanism: side.mechanism,
                        collect_detail: false,
                    };
                    let mut line = aggregate_row(
                        &scn.config.name,
                        &settings,
                        scn.config.delta,
                        scn.config.seed,
                        &side.summary,
                    );
                    line.push_str(&format!(
                        "target_q={};rel_gain={}",
                        num(*target),
                        num(o.relative_privacy_gain)
                    ));
                    out.push_str(&line);
                    out.push('\n');
                }
            }
            Err(e) => {
                out.push_str(&format!(
                    "{},-,-,-,-,-,-,-,-,-,-,unsolved target_q={}: {}\n",
                    scn.config.name,
                    num(*target),
                    e.to_string().replace(',', ";"),
                ));
            }
        }
    }
    out
}
