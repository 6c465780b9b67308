//! Parameter continuation by initial-condition inheritance.
//!
//! Every parameter step starts from the final state reached at the previous
//! step, so a run follows one attractor until it is destroyed and the orbit
//! lands elsewhere. Sweeps run one branch arm per seed and direction; charts
//! first walk a seed column and then every row outwards from it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{analyze, classify_pair, hausdorff, AnalysisConfig, AttractorClass, AttractorRecord, Synchrony};
use crate::error::{Error, Result};
use crate::model::{Model, PhysicalParams, State};

/// Default Hausdorff distance above which two Poincaré sets are different attractors.
pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.05;

/// A control parameter that can be put on an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Eps,
    /// Drive amplitude in Pa.
    Pac,
    DRatio,
}

impl Axis {
    pub fn apply(self, p: &PhysicalParams, value: f64) -> PhysicalParams {
        match self {
            Axis::Eps => p.with_eps(value),
            Axis::Pac => p.with_p_ac(value),
            Axis::DRatio => p.with_d_ratio(value),
        }
    }

    pub fn get(self, p: &PhysicalParams) -> f64 {
        match self {
            Axis::Eps => p.eps,
            Axis::Pac => p.p_ac,
            Axis::DRatio => p.d_ratio(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Eps => "eps",
            Axis::Pac => "pac",
            Axis::DRatio => "d_ratio",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(Axis::Eps),
            "pac" | "p_ac" => Ok(Axis::Pac),
            "d_ratio" => Ok(Axis::DRatio),
            other => Err(Error::Domain(format!(
                "unknown axis `{other}` (expected eps, pac or d_ratio)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub label: String,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_axis")]
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    #[serde(default = "default_start")]
    pub start: f64,
    pub seeds: Vec<Seed>,
    #[serde(default = "default_jump_threshold")]
    pub jump_threshold: f64,
}

fn default_sweep_axis() -> Axis {
    Axis::Eps
}

fn default_start() -> f64 {
    1.0
}

fn default_jump_threshold() -> f64 {
    DEFAULT_JUMP_THRESHOLD
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameters(m));
        if !(self.lo <= self.hi) {
            return bad(format!("sweep range [{}, {}] is empty", self.lo, self.hi));
        }
        if !(self.step > 0.0) {
            return bad(format!("sweep step must be positive, got {}", self.step));
        }
        if !(self.start >= self.lo && self.start <= self.hi) {
            return bad(format!(
                "start {} outside [{}, {}]",
                self.start, self.lo, self.hi
            ));
        }
        if self.seeds.is_empty() {
            return bad("sweep needs at least one seed".into());
        }
        if !(self.jump_threshold > 0.0) {
            return bad("jump_threshold must be positive".into());
        }
        Ok(())
    }

    /// Parameter values visited by one arm, excluding the start.
    fn arm_values(&self, arm: Arm) -> Vec<f64> {
        let slack = 1e-9 * self.step;
        let mut out = Vec::new();
        let mut k = 1u32;
        loop {
            let v = match arm {
                Arm::Up => self.start + k as f64 * self.step,
                Arm::Down => self.start - k as f64 * self.step,
                Arm::Start => return out,
            };
            if v > self.hi + slack || v < self.lo - slack {
                return out;
            }
            out.push(v.clamp(self.lo, self.hi));
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Only the start value (degenerate range).
    Start,
    Up,
    Down,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Start => "start",
            Arm::Up => "up",
            Arm::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    RangeEnd,
    Breakdown(String),
}

/// Marker written next to a record where the followed attractor was lost.
pub const JUMP_EVENT: &str = "jump";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub value: f64,
    pub record: AttractorRecord,
    /// Set when the record differs in class and shape from its predecessor.
    pub event: Option<String>,
}

/// One continuation arm, starting with the record at the start value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub label: String,
    pub axis: Axis,
    pub arm: Arm,
    pub points: Vec<BranchPoint>,
    pub termination: Termination,
}

impl Branch {
    /// Parameter values at which a jump was logged.
    pub fn jumps(&self) -> impl Iterator<Item = f64> + '_ {
        self.points
            .iter()
            .filter(|p| p.event.as_deref() == Some(JUMP_EVENT))
            .map(|p| p.value)
    }
}

/// Whether `next` is a different attractor from `prev`. Both records must be
/// classified; an unconverged spectrum is not evidence of a class change.
pub fn is_jump(prev: &AttractorRecord, next: &AttractorRecord, threshold: f64) -> bool {
    match (prev.class, next.class) {
        (Some(a), Some(b)) => a != b && hausdorff(&prev.poincare, &next.poincare) > threshold,
        _ => false,
    }
}

fn model_at(base: &PhysicalParams, axis: Axis, value: f64) -> Result<Model> {
    Model::new(axis.apply(base, value))
}

fn continue_arm(
    base: &PhysicalParams,
    sc: &SweepConfig,
    cfg: &AnalysisConfig,
    label: &str,
    arm: Arm,
    start: &AttractorRecord,
) -> Branch {
    let mut points = vec![BranchPoint {
        value: sc.start,
        record: start.clone(),
        event: None,
    }];
    let mut termination = Termination::RangeEnd;
    for v in sc.arm_values(arm) {
        let prev = &points.last().expect("arm starts non-empty").record;
        let outcome = model_at(base, sc.axis, v).and_then(|m| analyze(&m, &prev.final_state, cfg));
        match outcome {
            Ok(record) => {
                let event = is_jump(prev, &record, sc.jump_threshold).then(|| JUMP_EVENT.to_string());
                points.push(BranchPoint { value: v, record, event });
            }
            Err(e) => {
                termination = Termination::Breakdown(format!("at {} = {v}: {e}", sc.axis));
                break;
            }
        }
    }
    Branch {
        label: label.to_string(),
        axis: sc.axis,
        arm,
        points,
        termination,
    }
}

/// Continues every seed in both directions from the start value.
///
/// Branches come out seed by seed, each seed contributing its down arm and
/// then its up arm (or a single `Start` branch when the range is the start
/// value alone).
pub fn sweep(base: &PhysicalParams, sc: &SweepConfig, cfg: &AnalysisConfig) -> Result<Vec<Branch>> {
    sc.validate()?;
    cfg.validate()?;
    let start_model = model_at(base, sc.axis, sc.start)?;
    let starts: Vec<Result<AttractorRecord>> = sc
        .seeds
        .par_iter()
        .map(|seed| analyze(&start_model, &seed.state, cfg))
        .collect();

    let mut jobs = Vec::new();
    for (i, seed) in sc.seeds.iter().enumerate() {
        let arms: Vec<Arm> = [Arm::Down, Arm::Up]
            .into_iter()
            .filter(|&a| !sc.arm_values(a).is_empty())
            .collect();
        if arms.is_empty() {
            jobs.push((i, seed, Arm::Start));
        } else {
            jobs.extend(arms.into_iter().map(|a| (i, seed, a)));
        }
    }

    Ok(jobs
        .par_iter()
        .map(|&(i, seed, arm)| match &starts[i] {
            Ok(start) => continue_arm(base, sc, cfg, &seed.label, arm, start),
            Err(e) => Branch {
                label: seed.label.clone(),
                axis: sc.axis,
                arm,
                points: Vec::new(),
                termination: Termination::Breakdown(format!("at start {} = {}: {e}", sc.axis, sc.start)),
            },
        })
        .collect())
}

/// One attractor found at a parameter point, with the seeds that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctAttractor {
    pub record: AttractorRecord,
    /// Indices of the seeds (or probes) that landed on it or on its mirror image.
    pub members: Vec<usize>,
    /// True when a mirror-image copy (bubbles exchanged) was also reached.
    pub counterpart: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coexistence {
    pub attractors: Vec<DistinctAttractor>,
    /// Seeds whose analysis failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Groups records into distinct attractors. At `eps = 1` a record that matches
/// the mirror image of a known attractor is folded into it.
///
/// Two known classes must agree; an unconverged record is placed by its
/// Poincaré set alone. A group keeps the first converged record it meets.
pub fn merge_records(records: Vec<(usize, AttractorRecord)>, symmetric: bool, threshold: f64) -> Vec<DistinctAttractor> {
    let mut out: Vec<DistinctAttractor> = Vec::new();
    for (idx, rec) in records {
        let found = out.iter().enumerate().find_map(|(k, a)| {
            if let (Some(x), Some(y)) = (a.record.class, rec.class) {
                if x != y {
                    return None;
                }
            }
            if hausdorff(&a.record.poincare, &rec.poincare) <= threshold {
                Some((k, false))
            } else if symmetric && hausdorff(&a.record.poincare.swapped(), &rec.poincare) <= threshold {
                Some((k, true))
            } else {
                None
            }
        });
        match found {
            Some((k, mirrored)) => {
                let a = &mut out[k];
                a.members.push(idx);
                a.counterpart |= mirrored;
                if a.record.class.is_none() && rec.class.is_some() && !mirrored {
                    a.record = rec;
                }
            }
            None => out.push(DistinctAttractor {
                record: rec,
                members: vec![idx],
                counterpart: false,
            }),
        }
    }
    out
}

fn analyze_all(model: &Model, states: &[State], cfg: &AnalysisConfig, threshold: f64) -> Coexistence {
    let results: Vec<Result<AttractorRecord>> = states.par_iter().map(|s| analyze(model, s, cfg)).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => ok.push((i, rec)),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Coexistence {
        attractors: merge_records(ok, model.is_symmetric(), threshold),
        failures,
    }
}

/// Analyzes each seed and merges records that describe the same attractor.
pub fn find_coexisting(model: &Model, seeds: &[State], cfg: &AnalysisConfig, threshold: f64) -> Result<Coexistence> {
    if seeds.is_empty() {
        return Err(Error::Precondition("at least one seed is required".into()));
    }
    cfg.validate()?;
    Ok(analyze_all(model, seeds, cfg, threshold))
}

/// Sampling box for random initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeBox {
    pub r: (f64, f64),
    pub u: (f64, f64),
    pub theta: f64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        ProbeBox {
            r: (0.5, 1.5),
            u: (-0.5, 0.5),
            theta: 0.0,
        }
    }
}

impl ProbeBox {
    /// Deterministic draws, `r1, u1, r2, u2` per state in sequence.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..n)
            .map(|_| {
                let r1 = rng.gen_range(self.r.0..=self.r.1);
                let u1 = rng.gen_range(self.u.0..=self.u.1);
                let r2 = rng.gen_range(self.r.0..=self.r.1);
                let u2 = rng.gen_range(self.u.0..=self.u.1);
                State::new(r1, u1, r2, u2, self.theta)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub initial_states: Vec<State>,
    pub rng_seed: u64,
    pub coexistence: Coexistence,
}

impl ProbeReport {
    /// One attractor and no failed probes.
    pub fn looks_monostable(&self) -> bool {
        self.coexistence.attractors.len() == 1 && self.coexistence.failures.is_empty()
    }
}

/// Random-start search for coexisting attractors at one point.
pub fn monostability_probe(
    model: &Model,
    n_random: usize,
    sample_box: &ProbeBox,
    rng_seed: u64,
    cfg: &AnalysisConfig,
    threshold: f64,
) -> Result<ProbeReport> {
    if n_random == 0 {
        return Err(Error::Precondition("n_random must be at least 1".into()));
    }
    cfg.validate()?;
    let initial_states = sample_box.sample(n_random, rng_seed);
    let coexistence = analyze_all(model, &initial_states, cfg, threshold);
    Ok(ProbeReport {
        initial_states,
        rng_seed,
        coexistence,
    })
}

/// Evenly spaced axis of a chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub param: Axis,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn value(&self, i: usize) -> f64 {
        if self.n <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }

    /// Index of the node closest to `v`.
    pub fn nearest(&self, v: f64) -> usize {
        (0..self.n)
            .min_by(|&a, &b| (self.value(a) - v).abs().total_cmp(&(self.value(b) - v).abs()))
            .unwrap_or(0)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.n == 0 || !(self.lo <= self.hi) || (self.n > 1 && self.lo == self.hi) {
            return Err(Error::InvalidParameters(format!(
                "{name} axis needs n >= 1 and lo < hi (lo == hi only for n = 1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSeed {
    pub x: f64,
    pub y: f64,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub x: GridAxis,
    pub y: GridAxis,
    pub seed: ChartSeed,
}

impl ChartConfig {
    pub fn validate(&self) -> Result<()> {
        self.x.validate("x")?;
        self.y.validate("y")?;
        if self.x.param == self.y.param {
            return Err(Error::InvalidParameters("chart axes must be different parameters".into()));
        }
        let inside = |a: &GridAxis, v: f64| v >= a.lo && v <= a.hi;
        if !inside(&self.x, self.seed.x) || !inside(&self.y, self.seed.y) {
            return Err(Error::InvalidParameters(format!(
                "seed ({}, {}) lies outside the chart",
                self.seed.x, self.seed.y
            )));
        }
        Ok(())
    }

    /// Grid node used as the seed cell.
    pub fn seed_index(&self) -> (usize, usize) {
        (self.x.nearest(self.seed.x), self.y.nearest(self.seed.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Resolved {
        effective: (f64, f64),
        /// Rule outcome on the effective pair; trust it only when `converged`.
        class: AttractorClass,
        converged: bool,
        synchrony: Synchrony,
        final_state: State,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartCell {
    pub ix: usize,
    pub iy: usize,
    pub x_value: f64,
    pub y_value: f64,
    /// State inherited from the neighbouring cell (or the seed).
    pub initial_state: State,
    pub outcome: CellOutcome,
}

impl ChartCell {
    pub fn class(&self) -> Option<AttractorClass> {
        match &self.outcome {
            CellOutcome::Resolved { class, .. } => Some(*class),
            CellOutcome::Failed { .. } => None,
        }
    }

    fn continuation_state(&self) -> Option<State> {
        match &self.outcome {
            CellOutcome::Resolved { final_state, .. } => Some(*final_state),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    pub x: GridAxis,
    pub y: GridAxis,
    pub seed_index: (usize, usize),
    /// Row-major: `cells[iy * x.n + ix]`.
    pub cells: Vec<ChartCell>,
}

impl ChartGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> &ChartCell {
        &self.cells[iy * self.x.n + ix]
    }
}

fn chart_cell(base: &PhysicalParams, cc: &ChartConfig, cfg: &AnalysisConfig, ix: usize, iy: usize, from: State) -> ChartCell {
    let (xv, yv) = (cc.x.value(ix), cc.y.value(iy));
    let params = cc.y.param.apply(&cc.x.param.apply(base, xv), yv);
    let outcome = match Model::new(params).and_then(|m| analyze(&m, &from, cfg)) {
        Ok(rec) => CellOutcome::Resolved {
            effective: rec.spectrum.effective,
            class: classify_pair(rec.spectrum.effective.0, rec.spectrum.effective.1, cfg.lambda_tr),
            converged: rec.spectrum.converged,
            synchrony: rec.synchrony,
            final_state: rec.final_state,
        },
        Err(e) => CellOutcome::Failed { reason: e.to_string() },
    };
    ChartCell {
        ix,
        iy,
        x_value: xv,
        y_value: yv,
        initial_state: from,
        outcome,
    }
}

/// Walks `indices` in order, each cell inheriting the last good final state.
fn walk<F>(indices: impl Iterator<Item = usize>, mut state: State, mut at: F) -> Vec<ChartCell>
where
    F: FnMut(usize, State) -> ChartCell,
{
    let mut out = Vec::new();
    for i in indices {
        let cell = at(i, state);
        if let Some(s) = cell.continuation_state() {
            state = s;
        }
        out.push(cell);
    }
    out
}

/// Two-parameter chart: the seed column is continued up and down from the
/// seed cell, then every row left and right from its seed-column cell.
/// Rows run in parallel; failed cells are recorded, never fatal.
pub fn chart(base: &PhysicalParams, cc: &ChartConfig, cfg: &AnalysisConfig) -> Result<ChartGrid> {
    cc.validate()?;
    cfg.validate()?;
    let (sx, sy) = cc.seed_index();

    let seed_cell = chart_cell(base, cc, cfg, sx, sy, cc.seed.state);
    let start = seed_cell.continuation_state().unwrap_or(cc.seed.state);
    let mut column: Vec<Option<ChartCell>> = vec![None; cc.y.n];
    let up = walk(sy + 1..cc.y.n, start, |iy, s| chart_cell(base, cc, cfg, sx, iy, s));
    let down = walk((0..sy).rev(), start, |iy, s| chart_cell(base, cc, cfg, sx, iy, s));
    column[sy] = Some(seed_cell);
    for c in up.into_iter().chain(down) {
        let iy = c.iy;
        column[iy] = Some(c);
    }
    let column: Vec<ChartCell> = column.into_iter().map(|c| c.expect("column filled")).collect();

    let rows: Vec<Vec<ChartCell>> = column
        .into_par_iter()
        .map(|anchor| {
            let iy = anchor.iy;
            let from = anchor.continuation_state().unwrap_or(anchor.initial_state);
            let right = walk(sx + 1..cc.x.n, from, |ix, s| chart_cell(base, cc, cfg, ix, iy, s));
            let left = walk((0..sx).rev(), from, |ix, s| chart_cell(base, cc, cfg, ix, iy, s));
            let mut row: Vec<ChartCell> = left.into_iter().rev().collect();
            row.push(anchor);
            row.extend(right);
            row
        })
        .collect();

    Ok(ChartGrid {
        x: cc.x,
        y: cc.y,
        seed_index: (sx, sy),
        cells: rows.into_iter().flatten().collect(),
    })
}
