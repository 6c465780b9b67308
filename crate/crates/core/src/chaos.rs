//! Lyapunov spectra, stroboscopic sections and attractor classification.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{IntegratorConfig, TangentBundle, TangentFlow, Trajectory};
use crate::model::{Model, State};

/// Threshold separating effective exponents from zero.
pub const DEFAULT_LAMBDA_TR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Serialized as its own block by the run configuration.
    #[serde(skip)]
    pub integrator: IntegratorConfig,
    pub lambda_tr: f64,
    pub delta_sync: f64,
    pub transient_periods: usize,
    pub measure_periods: usize,
    /// Unconverged measurements are extended in steps of half their length up
    /// to this many periods. Values below `measure_periods` disable extension.
    pub max_measure_periods: usize,
    pub conv_tol: f64,
    /// Drive periods between tangent-frame reorthonormalizations.
    pub renorm_periods: usize,
    /// Number of stroboscopic samples kept (the last ones of the measurement).
    pub poincare_collect: usize,
    pub period_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            integrator: IntegratorConfig::default(),
            lambda_tr: DEFAULT_LAMBDA_TR,
            delta_sync: 1e-6,
            transient_periods: 2_000,
            measure_periods: 20_000,
            max_measure_periods: 100_000,
            conv_tol: 5e-4,
            renorm_periods: 1,
            poincare_collect: 5_000,
            period_tol: 1e-6,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameters(m.to_string()));
        if !(self.lambda_tr > 0.0) {
            return bad("lambda_tr must be positive");
        }
        if !(self.delta_sync > 0.0) {
            return bad("delta_sync must be positive");
        }
        if self.transient_periods == 0 || self.measure_periods == 0 {
            return bad("run lengths must be positive");
        }
        if !(self.conv_tol > 0.0) {
            return bad("conv_tol must be positive");
        }
        if self.renorm_periods == 0 {
            return bad("renorm_periods must be positive");
        }
        if self.poincare_collect == 0 {
            return bad("poincare_collect must be positive");
        }
        if !(self.period_tol > 0.0) {
            return bad("period_tol must be positive");
        }
        Ok(())
    }
}

/// Converged (or not) Lyapunov exponents of the five-dimensional flow,
/// per unit nondimensional time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Sorted descending.
    pub exponents: [f64; 5],
    /// Index into `exponents` of the referent (time-translation) exponent.
    pub referent_index: usize,
    /// The two largest exponents once the referent is removed.
    pub effective: (f64, f64),
    pub converged: bool,
    pub transient_periods: usize,
    pub measure_periods: usize,
    /// Time average of `trace J` over the measured trajectory.
    pub trace_average: f64,
    /// Largest range of any running estimate over the final quarter of the run.
    #[serde(default)]
    pub drift: f64,
}

impl LyapunovSpectrum {
    /// Builds the spectrum from unsorted exponents.
    pub fn from_exponents(
        raw: [f64; 5],
        converged: bool,
        transient_periods: usize,
        measure_periods: usize,
        trace_average: f64,
    ) -> Self {
        let mut exponents = raw;
        exponents.sort_by(|a, b| b.total_cmp(a));
        let referent_index = (0..5)
            .min_by(|&i, &j| exponents[i].abs().total_cmp(&exponents[j].abs()))
            .unwrap_or(0);
        let mut rest = exponents
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != referent_index)
            .map(|(_, &v)| v);
        let l1 = rest.next().unwrap_or(f64::NAN);
        let l2 = rest.next().unwrap_or(f64::NAN);
        LyapunovSpectrum {
            exponents,
            referent_index,
            effective: (l1, l2),
            converged,
            transient_periods,
            measure_periods,
            trace_average,
            drift: 0.0,
        }
    }

    pub fn referent(&self) -> f64 {
        self.exponents[self.referent_index]
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttractorClass {
    Periodic,
    Quasiperiodic,
    Chaotic,
    Hyperchaotic,
}

impl AttractorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttractorClass::Periodic => "Periodic",
            AttractorClass::Quasiperiodic => "Quasiperiodic",
            AttractorClass::Chaotic => "Chaotic",
            AttractorClass::Hyperchaotic => "Hyperchaotic",
        }
    }
}

impl fmt::Display for AttractorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttractorClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Periodic" => Ok(AttractorClass::Periodic),
            "Quasiperiodic" => Ok(AttractorClass::Quasiperiodic),
            "Chaotic" => Ok(AttractorClass::Chaotic),
            "Hyperchaotic" => Ok(AttractorClass::Hyperchaotic),
            other => Err(Error::Domain(format!("unknown attractor class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Synchrony {
    Synchronous,
    Asynchronous,
    /// Bubbles differ, so there is no synchronization manifold.
    NotApplicable,
}

impl Synchrony {
    pub fn as_str(&self) -> &'static str {
        match self {
            Synchrony::Synchronous => "Synchronous",
            Synchrony::Asynchronous => "Asynchronous",
            Synchrony::NotApplicable => "NotApplicable",
        }
    }
}

/// Threshold rule on the effective pair. The quasiperiodic band is closed,
/// so `l1 = +-lambda_tr` is quasiperiodic; `l2 = lambda_tr` is chaotic.
pub fn classify_pair(l1: f64, l2: f64, lambda_tr: f64) -> AttractorClass {
    if l1 < -lambda_tr {
        AttractorClass::Periodic
    } else if l1 <= lambda_tr {
        AttractorClass::Quasiperiodic
    } else if l2 <= lambda_tr {
        AttractorClass::Chaotic
    } else {
        AttractorClass::Hyperchaotic
    }
}

pub fn classify(ls: &LyapunovSpectrum, lambda_tr: f64) -> Result<AttractorClass> {
    if !ls.converged {
        return Err(Error::Unconverged);
    }
    Ok(classify_pair(ls.effective.0, ls.effective.1, lambda_tr))
}

/// Stroboscopic samples of `(r1, u1, r2, u2)`, one per drive period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoincareSet {
    pub samples: Vec<[f64; 4]>,
    /// Periods integrated before the first stored sample.
    pub skip: usize,
}

impl PoincareSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image under the bubble exchange.
    pub fn swapped(&self) -> PoincareSet {
        PoincareSet {
            samples: self.samples.iter().map(|s| [s[2], s[3], s[0], s[1]]).collect(),
            skip: self.skip,
        }
    }

    pub fn max_sync_deviation(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s[0] - s[2]).hypot(s[1] - s[3]))
            .fold(0.0, f64::max)
    }
}

fn dist4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric Hausdorff distance between two sample sets.
pub fn hausdorff(a: &PoincareSet, b: &PoincareSet) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    let directed = |from: &[[f64; 4]], to: &[[f64; 4]]| {
        from.iter()
            .map(|p| to.iter().map(|q| dist4(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&a.samples, &b.samples).max(directed(&b.samples, &a.samples))
}

/// Integrates `skip` periods unrecorded, then records `collect` samples.
pub fn poincare(model: &Model, x0: &State, cfg: &IntegratorConfig, skip: usize, collect: usize) -> Result<PoincareSet> {
    if skip == 0 || collect == 0 {
        return Err(Error::Precondition("skip and collect must be positive".into()));
    }
    let mut traj = Trajectory::new(model, *x0, *cfg);
    traj.advance_periods(skip)?;
    let start = traj.tau();
    let period = model.period();
    let mut samples = Vec::with_capacity(collect);
    for k in 1..=collect {
        let s = traj.advance_to(start + k as f64 * period)?;
        samples.push(s.mechanical());
    }
    Ok(PoincareSet { samples, skip })
}

/// Smallest `p` such that every sample returns to within `tol` after `p`
/// iterations of the map.
pub fn detect_period(ps: &PoincareSet, tol: f64) -> Option<usize> {
    let n = ps.len();
    let limit = (n / 4).max(1);
    (1..=limit).filter(|&p| p < n).find(|&p| {
        (0..n - p).all(|i| dist4(&ps.samples[i], &ps.samples[i + p]) < tol)
    })
}

pub fn is_synchronous(ps: &PoincareSet, delta_sync: f64) -> bool {
    !ps.is_empty() && ps.max_sync_deviation() < delta_sync
}

/// Output of one tangent-space measurement.
struct Measurement {
    raw: [f64; 5],
    converged: bool,
    drift: f64,
    periods: usize,
    trace_average: f64,
    samples: Vec<[f64; 4]>,
    final_state: State,
}

/// Largest range of any running estimate over the final quarter of the
/// first `n` periods. `cum` holds `(k, log-stretch sums)` at each
/// renormalization after period `k`.
fn window_drift(cum: &[(usize, [f64; 5])], n: usize, period: f64) -> f64 {
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    let window: Vec<_> = cum.iter().filter(|(k, _)| *k >= n - n / 4 && *k <= n).collect();
    if window.len() < 2 {
        return f64::INFINITY;
    }
    for (k, sums) in window {
        let t = *k as f64 * period;
        for i in 0..5 {
            let est = sums[i] / t;
            lo[i] = lo[i].min(est);
            hi[i] = hi[i].max(est);
        }
    }
    (0..5)
        .map(|i| hi[i] - lo[i])
        .map(|d| if d.is_finite() { d } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Runs the Benettin measurement from an (assumed post-transient) state,
/// keeping the last `keep` stroboscopic samples. The run is extended while
/// the estimates have not settled, up to `max_measure_periods`.
fn measure(model: &Model, x: State, cfg: &AnalysisConfig, keep: usize) -> Result<Measurement> {
    let period = model.period();
    let cap = cfg.max_measure_periods.max(cfg.measure_periods);
    let mut n = cfg.measure_periods;
    let mut flow = TangentFlow::new(model, TangentBundle::identity(x), cfg.integrator);
    let mut logs = [0.0; 5];
    let mut cum = Vec::with_capacity(n / cfg.renorm_periods + 1);
    let mut samples = VecDeque::with_capacity(keep + 1);
    let mut since_renorm = 0;
    let mut k = 0;
    let drift = loop {
        k += 1;
        let target = k as f64 * period;
        since_renorm += 1;
        let step = if since_renorm == cfg.renorm_periods || k == n {
            since_renorm = 0;
            flow.advance_renormalized(target).map(Some)
        } else {
            flow.advance_to(target).map(|_| None)
        };
        let step = step.map_err(|e| Error::Spectrum {
            source: Box::new(e),
            partial: logs.iter().map(|l| l / ((k - 1).max(1) as f64 * period)).collect(),
            elapsed_periods: k - 1,
        })?;
        if let Some(l) = step {
            for i in 0..5 {
                logs[i] += l[i];
            }
            cum.push((k, logs));
        }
        if keep > 0 {
            if samples.len() == keep {
                samples.pop_front();
            }
            samples.push_back(flow.bundle().base.mechanical());
        }
        if k == n {
            let d = window_drift(&cum, n, period);
            if d < cfg.conv_tol || n >= cap {
                break d;
            }
            n = (n + n / 2).min(cap);
        }
    };
    let elapsed = n as f64 * period;
    Ok(Measurement {
        raw: logs.map(|l| l / elapsed),
        converged: drift < cfg.conv_tol,
        drift,
        periods: n,
        trace_average: flow.trace_integral() / elapsed,
        samples: samples.into(),
        final_state: flow.bundle().base,
    })
}

/// Discards the transient, then measures all five exponents.
pub fn lyapunov_spectrum(model: &Model, x0: &State, cfg: &AnalysisConfig) -> Result<LyapunovSpectrum> {
    cfg.validate()?;
    let mut traj = Trajectory::new(model, *x0, cfg.integrator);
    traj.advance_periods(cfg.transient_periods)
        .map_err(|e| Error::Spectrum { source: Box::new(e), partial: Vec::new(), elapsed_periods: 0 })?;
    let m = measure(model, traj.state(), cfg, 0)?;
    let mut spectrum = LyapunovSpectrum::from_exponents(
        m.raw,
        m.converged,
        cfg.transient_periods,
        m.periods,
        m.trace_average,
    );
    spectrum.drift = m.drift;
    Ok(spectrum)
}

/// Control-parameter coordinates of an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub p_ac: f64,
    pub d_ratio: f64,
    pub eps: f64,
}

impl ParamPoint {
    pub fn of(model: &Model) -> Self {
        let p = model.params();
        ParamPoint {
            p_ac: p.p_ac,
            d_ratio: p.d_ratio(),
            eps: p.eps,
        }
    }
}

/// Everything learned about one attractor at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorRecord {
    pub point: ParamPoint,
    pub initial_state: State,
    /// State at the end of the measurement, used to seed continuation.
    pub final_state: State,
    pub spectrum: LyapunovSpectrum,
    /// `None` when the spectrum did not converge.
    pub class: Option<AttractorClass>,
    pub synchrony: Synchrony,
    pub poincare: PoincareSet,
    pub period: Option<usize>,
}

impl AttractorRecord {
    /// Whether the stored class follows from the stored spectrum.
    pub fn is_consistent(&self, lambda_tr: f64) -> bool {
        match classify(&self.spectrum, lambda_tr) {
            Ok(c) => self.class == Some(c),
            Err(_) => self.class.is_none(),
        }
    }
}

/// Full analysis of the attractor reached from `x0`.
pub fn analyze(model: &Model, x0: &State, cfg: &AnalysisConfig) -> Result<AttractorRecord> {
    cfg.validate()?;
    let mut traj = Trajectory::new(model, *x0, cfg.integrator);
    traj.advance_periods(cfg.transient_periods)
        .map_err(|e| Error::Spectrum { source: Box::new(e), partial: Vec::new(), elapsed_periods: 0 })?;
    let m = measure(model, traj.state(), cfg, cfg.poincare_collect)?;
    let mut spectrum = LyapunovSpectrum::from_exponents(
        m.raw,
        m.converged,
        cfg.transient_periods,
        m.periods,
        m.trace_average,
    );
    spectrum.drift = m.drift;
    let class = classify(&spectrum, cfg.lambda_tr).ok();
    let poincare = PoincareSet {
        samples: m.samples,
        skip: cfg.transient_periods + m.periods.saturating_sub(cfg.poincare_collect),
    };
    let synchrony = if model.is_symmetric() {
        if is_synchronous(&poincare, cfg.delta_sync) {
            Synchrony::Synchronous
        } else {
            Synchrony::Asynchronous
        }
    } else {
        Synchrony::NotApplicable
    };
    let period = detect_period(&poincare, cfg.period_tol);
    Ok(AttractorRecord {
        point: ParamPoint::of(model),
        initial_state: *x0,
        final_state: m.final_state,
        spectrum,
        class,
        synchrony,
        poincare,
        period,
    })
}
