//! Adaptive Cash–Karp 4(5) integration of the bubble system.
//!
//! Steps are clamped so that integration lands exactly on requested times;
//! stroboscopic samples therefore never need interpolation. Tangent vectors
//! for Lyapunov analysis ride along in the same Runge–Kutta stages with the
//! Jacobian evaluated at each stage's base point, while step control looks
//! at the base state only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_phase, Model, State, DEFAULT_JACOBIAN_H_REL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step as a fraction of the drive period.
    pub h0: f64,
    /// Largest step as a fraction of the drive period.
    pub h_max: f64,
    pub safety: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-12,
            h0: 0.01,
            h_max: 0.1,
            safety: 0.9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameters(m));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad(format!(
                "tolerances must be positive (rtol {}, atol {})",
                self.rtol, self.atol
            ));
        }
        if !(self.h0 > 0.0 && self.h0 <= self.h_max) {
            return bad(format!("need 0 < h0 ({}) <= h_max ({})", self.h0, self.h_max));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety factor must lie in (0, 1], got {}", self.safety));
        }
        Ok(())
    }
}

// Cash–Karp tableau. Stage abscissae are not needed: the system is autonomous.
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
    [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];
const B5: [f64; 6] = [
    37.0 / 378.0,
    0.0,
    250.0 / 621.0,
    125.0 / 594.0,
    0.0,
    512.0 / 1771.0,
];
const B4: [f64; 6] = [
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    1.0 / 4.0,
];

/// One embedded pair evaluation: returns the fifth-order solution and
/// its difference from the embedded fourth-order one.
fn cash_karp<const N: usize, F>(f: &F, y: &[f64; N], h: f64) -> Result<([f64; N], [f64; N])>
where
    F: Fn(&[f64; N]) -> Result<[f64; N]>,
{
    let mut k = [[0.0; N]; 6];
    k[0] = f(y)?;
    for s in 1..6 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for n in 0..N {
                    ys[n] += h * a * kj[n];
                }
            }
        }
        k[s] = f(&ys)?;
    }
    let mut y5 = *y;
    let mut diff = [0.0; N];
    for s in 0..6 {
        for n in 0..N {
            y5[n] += h * B5[s] * k[s][n];
            diff[n] += h * (B5[s] - B4[s]) * k[s][n];
        }
    }
    Ok((y5, diff))
}

/// Weighted RMS of the local error estimate over the first five components.
fn error_norm<const N: usize>(y: &[f64; N], y_new: &[f64; N], diff: &[f64; N], cfg: &IntegratorConfig) -> f64 {
    let mut acc = 0.0;
    for n in 0..5 {
        let scale = cfg.atol + cfg.rtol * y[n].abs().max(y_new[n].abs());
        let e = diff[n] / scale;
        acc += e * e;
    }
    (acc / 5.0).sqrt()
}

fn next_step(h: f64, err: f64, cfg: &IntegratorConfig, h_max: f64) -> f64 {
    let factor = if err == 0.0 {
        5.0
    } else {
        (cfg.safety * err.powf(-0.2)).clamp(0.1, 5.0)
    };
    (h * factor).min(h_max)
}

/// Result of a single trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Fifth-order solution, phase wrapped.
    pub state: State,
    pub err: f64,
    pub h_next: f64,
}

impl Step {
    pub fn accepted(&self) -> bool {
        self.err <= 1.0
    }
}

/// One embedded Cash–Karp step of size `h`. The caller decides what to do
/// with a rejected step; `h_next` is the controller's proposal either way.
pub fn step(model: &Model, x: &State, h: f64, cfg: &IntegratorConfig) -> Result<Step> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("step size must be positive, got {h}")));
    }
    let period = model.period();
    if h < 1e-14 * period {
        return Err(Error::StepUnderflow { h, tau: f64::NAN });
    }
    let y = x.to_array();
    let (y5, diff) = cash_karp(&|v: &[f64; 5]| model.rhs(v), &y, h)?;
    let err = error_norm(&y, &y5, &diff, cfg);
    Ok(Step {
        state: State::from_array(y5).wrapped(),
        err,
        h_next: next_step(h, err, cfg, cfg.h_max * period),
    })
}

/// Fixed-step fifth-order propagation, used for order verification.
pub fn fixed_steps(model: &Model, x: &State, h: f64, n: usize) -> Result<State> {
    let mut y = x.to_array();
    for _ in 0..n {
        y = cash_karp(&|v: &[f64; 5]| model.rhs(v), &y, h)?.0;
    }
    Ok(State::from_array(y).wrapped())
}

/// Drives an `N`-component system (base state first) from `*tau` to
/// `tau_target`, landing exactly on the target.
fn advance<const N: usize, F>(
    y: &mut [f64; N],
    tau: &mut f64,
    h: &mut f64,
    tau_target: f64,
    cfg: &IntegratorConfig,
    period: f64,
    f: F,
) -> Result<()>
where
    F: Fn(&[f64; N]) -> Result<[f64; N]>,
{
    if tau_target < *tau {
        return Err(Error::Precondition(format!(
            "integration is forward only: target {tau_target} is before current time {}",
            *tau
        )));
    }
    let h_max = cfg.h_max * period;
    let h_min = 1e-14 * period;
    let mut last_failure: Option<Error> = None;
    while *tau < tau_target {
        let remaining = tau_target - *tau;
        let landing = *h >= remaining;
        let trial = if landing { remaining } else { *h };
        if trial < h_min && !landing {
            return Err(last_failure.take().unwrap_or(Error::StepUnderflow { h: trial, tau: *tau }));
        }
        match cash_karp(&f, y, trial) {
            Ok((y_new, diff)) => {
                let err = error_norm(y, &y_new, &diff, cfg);
                if err.is_nan() || y_new.iter().any(|v| !v.is_finite()) {
                    last_failure = Some(Error::NonFinite { tau: *tau });
                    *h = trial * 0.1;
                    continue;
                }
                let proposal = next_step(trial, err, cfg, h_max);
                if err <= 1.0 {
                    *y = y_new;
                    y[4] = wrap_phase(y[4]);
                    *tau = if landing { tau_target } else { *tau + trial };
                    last_failure = None;
                    // a short landing step should not throttle the next interval
                    *h = if landing { proposal.max(*h) } else { proposal };
                } else {
                    *h = proposal;
                }
            }
            Err(e) if e.is_breakdown() => {
                if trial <= h_min {
                    return Err(e);
                }
                last_failure = Some(e);
                *h = trial * 0.1;
            }
            Err(e) => return Err(e),
        }
        if *h < h_min && *tau < tau_target && tau_target - *tau > h_min {
            return Err(last_failure.take().unwrap_or(Error::StepUnderflow { h: *h, tau: *tau }));
        }
    }
    Ok(())
}

/// A trajectory owning its state, clock and step-size memory.
#[derive(Debug, Clone)]
pub struct Trajectory<'m> {
    model: &'m Model,
    cfg: IntegratorConfig,
    state: State,
    tau: f64,
    h: f64,
}

impl<'m> Trajectory<'m> {
    pub fn new(model: &'m Model, state: State, cfg: IntegratorConfig) -> Self {
        let h = cfg.h0 * model.period();
        Trajectory {
            model,
            cfg,
            state: state.wrapped(),
            tau: 0.0,
            h,
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn advance_to(&mut self, tau_target: f64) -> Result<State> {
        let model = self.model;
        let mut y = self.state.to_array();
        advance(
            &mut y,
            &mut self.tau,
            &mut self.h,
            tau_target,
            &self.cfg,
            model.period(),
            |v: &[f64; 5]| model.rhs(v),
        )?;
        self.state = State::from_array(y);
        Ok(self.state)
    }

    /// Advances by a whole number of drive periods, so the phase returns
    /// to its starting value.
    pub fn advance_periods(&mut self, periods: usize) -> Result<State> {
        let start = self.tau;
        let period = self.model.period();
        for k in 1..=periods {
            self.advance_to(start + k as f64 * period)?;
        }
        Ok(self.state)
    }
}

/// Integrates from `x` at time `tau0` to `tau_target`.
pub fn integrate_to(model: &Model, x: &State, tau0: f64, tau_target: f64, cfg: &IntegratorConfig) -> Result<State> {
    let mut traj = Trajectory::new(model, *x, *cfg);
    traj.tau = tau0;
    traj.advance_to(tau_target)
}

/// Base point plus five tangent vectors, `vectors[i]` being the i-th vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBundle {
    pub base: State,
    pub vectors: [[f64; 5]; 5],
}

impl TangentBundle {
    /// Base point with the identity frame.
    pub fn identity(base: State) -> Self {
        let mut vectors = [[0.0; 5]; 5];
        for (i, v) in vectors.iter_mut().enumerate() {
            v[i] = 1.0;
        }
        TangentBundle { base, vectors }
    }

    fn pack(&self) -> [f64; 31] {
        let mut y = [0.0; 31];
        y[..5].copy_from_slice(&self.base.to_array());
        for (i, v) in self.vectors.iter().enumerate() {
            y[5 + 5 * i..10 + 5 * i].copy_from_slice(v);
        }
        y
    }

    fn unpack(y: &[f64; 31]) -> Self {
        let mut base = [0.0; 5];
        base.copy_from_slice(&y[..5]);
        let mut vectors = [[0.0; 5]; 5];
        for (i, v) in vectors.iter_mut().enumerate() {
            v.copy_from_slice(&y[5 + 5 * i..10 + 5 * i]);
        }
        TangentBundle {
            base: State::from_array(base),
            vectors,
        }
    }

    /// Modified Gram–Schmidt in vector order. Returns the norms removed
    /// from each vector.
    pub fn orthonormalize(&mut self) -> Result<[f64; 5]> {
        let mut norms = [0.0; 5];
        for i in 0..5 {
            let before = norm(&self.vectors[i]);
            for j in 0..i {
                let proj = dot(&self.vectors[i], &self.vectors[j]);
                let vj = self.vectors[j];
                for (a, b) in self.vectors[i].iter_mut().zip(vj.iter()) {
                    *a -= proj * b;
                }
            }
            let n = norm(&self.vectors[i]);
            if !n.is_finite() || n < 1e-300 {
                return Err(Error::Degenerate(format!("tangent vector {i} has norm {n:e}")));
            }
            if n < 1e-14 * before {
                return Err(Error::Degenerate(format!(
                    "tangent vector {i} lost rank (relative norm {:e})",
                    n / before
                )));
            }
            for a in self.vectors[i].iter_mut() {
                *a /= n;
            }
            norms[i] = n;
        }
        Ok(norms)
    }
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64; 5]) -> f64 {
    dot(a, a).sqrt()
}

/// Base trajectory co-integrated with its linearization `v' = J(x) v`.
/// The integral of `trace J` is carried along as an extra component.
#[derive(Debug, Clone)]
pub struct TangentFlow<'m> {
    model: &'m Model,
    cfg: IntegratorConfig,
    bundle: TangentBundle,
    trace_integral: f64,
    tau: f64,
    h: f64,
    h_rel: f64,
}

impl<'m> TangentFlow<'m> {
    pub fn new(model: &'m Model, bundle: TangentBundle, cfg: IntegratorConfig) -> Self {
        TangentFlow {
            model,
            cfg,
            bundle,
            trace_integral: 0.0,
            tau: 0.0,
            h: cfg.h0 * model.period(),
            h_rel: DEFAULT_JACOBIAN_H_REL,
        }
    }

    pub fn bundle(&self) -> &TangentBundle {
        &self.bundle
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Integral of `trace J` along the base trajectory so far.
    pub fn trace_integral(&self) -> f64 {
        self.trace_integral
    }

    /// Propagates without renormalizing.
    pub fn advance_to(&mut self, tau_target: f64) -> Result<()> {
        let model = self.model;
        let h_rel = self.h_rel;
        let mut y = self.bundle.pack();
        y[30] = self.trace_integral;
        advance(
            &mut y,
            &mut self.tau,
            &mut self.h,
            tau_target,
            &self.cfg,
            model.period(),
            |v: &[f64; 31]| {
                let mut base = [0.0; 5];
                base.copy_from_slice(&v[..5]);
                let mut out = [0.0; 31];
                out[..5].copy_from_slice(&model.rhs(&base)?);
                let jac = model.jacobian_array(&base, h_rel)?;
                for i in 0..5 {
                    let t = &v[5 + 5 * i..10 + 5 * i];
                    for (row, jr) in jac.iter().enumerate() {
                        out[5 + 5 * i + row] = jr.iter().zip(t).map(|(a, b)| a * b).sum();
                    }
                }
                out[30] = (0..5).map(|k| jac[k][k]).sum();
                Ok(out)
            },
        )?;
        self.bundle = TangentBundle::unpack(&y);
        self.trace_integral = y[30];
        Ok(())
    }

    /// Advances and reorthonormalizes, returning the logarithms of the
    /// removed norms.
    pub fn advance_renormalized(&mut self, tau_target: f64) -> Result<[f64; 5]> {
        self.advance_to(tau_target)?;
        let norms = self.bundle.orthonormalize()?;
        Ok(norms.map(f64::ln))
    }
}

/// Co-integrates `tb` over `tau_span`, reorthonormalizing every
/// `renorm_interval` (and at the end). Returns the final bundle and the
/// accumulated log stretch of each vector.
pub fn integrate_with_tangents(
    model: &Model,
    tb: TangentBundle,
    tau_span: f64,
    cfg: &IntegratorConfig,
    renorm_interval: f64,
) -> Result<(TangentBundle, [f64; 5])> {
    if !(renorm_interval > 0.0) {
        return Err(Error::Precondition(format!(
            "renormalization interval must be positive, got {renorm_interval}"
        )));
    }
    if !(tau_span >= 0.0) {
        return Err(Error::Precondition(format!("negative span {tau_span}")));
    }
    let mut flow = TangentFlow::new(model, tb, *cfg);
    let mut logs = [0.0; 5];
    let mut k = 1usize;
    loop {
        let target = (k as f64 * renorm_interval).min(tau_span);
        let l = flow.advance_renormalized(target)?;
        for (acc, v) in logs.iter_mut().zip(l) {
            *acc += v;
        }
        if target >= tau_span {
            break;
        }
        k += 1;
    }
    Ok((flow.bundle, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhysicalParams;

    fn undriven(eps: f64) -> Model {
        Model::new(PhysicalParams::default().with_eps(eps).with_p_ac(0.0)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        let cfg = IntegratorConfig { h0: 0.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = IntegratorConfig { rtol: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn equilibrium_step_is_identity() {
        let m = undriven(1.0);
        let cfg = IntegratorConfig::default();
        let x = State::rest(1.0);
        for h in [1e-3, 0.1, 0.4] {
            let s = step(&m, &x, h, &cfg).unwrap();
            assert!(s.accepted());
            let a = s.state.to_array();
            for k in 0..4 {
                assert!((a[k] - x.to_array()[k]).abs() <= cfg.atol);
            }
        }
    }

    #[test]
    fn rejected_step_shrinks() {
        let m = Model::new(PhysicalParams::default()).unwrap();
        let cfg = IntegratorConfig::default();
        let s = step(&m, &State::new(1.3, 0.5, 0.7, -0.5, 0.0), 1.0, &cfg).unwrap();
        assert!(!s.accepted());
        assert!(s.h_next < 1.0 && s.h_next >= 0.1);
    }

    #[test]
    fn zero_span_is_identity() {
        let m = Model::new(PhysicalParams::default()).unwrap();
        let x = State::new(1.1, 0.2, 0.9, -0.1, 1.0);
        let y = integrate_to(&m, &x, 3.0, 3.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn backward_target_refused() {
        let m = Model::new(PhysicalParams::default()).unwrap();
        let x = State::rest(1.0);
        let r = integrate_to(&m, &x, 1.0, 0.5, &IntegratorConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn equilibrium_survives_long_integration() {
        let m = undriven(1.0);
        let cfg = IntegratorConfig::default();
        let mut traj = Trajectory::new(&m, State::rest(1.0), cfg);
        let y = traj.advance_periods(100).unwrap();
        assert!((y.r1 - 1.0).abs() < 10.0 * cfg.atol);
        assert!(y.u1.abs() < 10.0 * cfg.atol);
        assert!((y.theta).abs() < 1e-9 || (y.theta - std::f64::consts::TAU).abs() < 1e-9);
    }

    #[test]
    fn phase_direction_has_no_stretch_when_undriven() {
        let m = undriven(1.0);
        let mut tb = TangentBundle::identity(State::new(1.2, 0.0, 1.2, 0.0, 0.0));
        tb.vectors.rotate_left(4); // theta direction first
        let cfg = IntegratorConfig::default();
        let (_, logs) = integrate_with_tangents(&m, tb, 10.0 * m.period(), &cfg, m.period()).unwrap();
        assert!(logs[0].abs() < 1e-12, "{}", logs[0]);
    }

    #[test]
    fn degenerate_frame_detected() {
        let mut tb = TangentBundle::identity(State::rest(1.0));
        tb.vectors[1] = tb.vectors[0];
        assert!(matches!(tb.orthonormalize(), Err(Error::Degenerate(_))));
    }
}
