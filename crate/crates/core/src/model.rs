//! Two encapsulated gas bubbles in a compressible liquid, each obeying a
//! Keller–Miksis equation with de Jong shell terms, coupled through the
//! Bjerknes pressure radiated by the other bubble.
//!
//! All dynamics are expressed in nondimensional variables:
//! `R_i = R10 * r_i`, `t = tau / omega0`, `dR_i/dt = R10 * omega0 * u_i`,
//! pressures are scaled by `rho * R10^2 * omega0^2`. The drive phase
//! `theta = omega * t` is carried as a fifth state component, which makes
//! the system autonomous.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius below which the model is treated as broken down (total collapse).
pub const RADIUS_FLOOR: f64 = 0.01;

/// Default relative threshold on `|det A| / ||A||_F^2` in the acceleration solve.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-12;

/// Dimensional model constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub p_stat: f64,
    pub p_v: f64,
    pub sigma: f64,
    pub rho: f64,
    pub eta_l: f64,
    pub c: f64,
    pub gamma: f64,
    pub chi: f64,
    pub kappa_s: f64,
    /// Equilibrium radius of bubble 1.
    pub r10: f64,
    /// Radii ratio, `R20 = eps * R10`.
    pub eps: f64,
    /// Distance between bubble centres.
    pub d: f64,
    pub p_ac: f64,
    /// Cyclic drive frequency (rad/s).
    pub omega: f64,
}

impl Default for PhysicalParams {
    /// SonoVue-like shelled bubbles at 1.72 um, driven at 2.87e7 rad/s.
    fn default() -> Self {
        let r10 = 1.72e-6;
        PhysicalParams {
            p_stat: 101_325.0,
            p_v: 2_330.0,
            sigma: 0.0725,
            rho: 1000.0,
            eta_l: 0.001,
            c: 1500.0,
            gamma: 4.0 / 3.0,
            chi: 0.22,
            kappa_s: 2.5e-9,
            r10,
            eps: 1.0,
            d: 21.0 * r10,
            p_ac: 1.2e6,
            omega: 2.87e7,
        }
    }
}

impl PhysicalParams {
    pub fn d_ratio(&self) -> f64 {
        self.d / self.r10
    }

    pub fn with_d_ratio(mut self, d_ratio: f64) -> Self {
        self.d = d_ratio * self.r10;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_p_ac(mut self, p_ac: f64) -> Self {
        self.p_ac = p_ac;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, msg)| Error::InvalidParameters(msg))
    }

    /// Like [`PhysicalParams::validate`], also naming the offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("p_stat", self.p_stat),
            ("p_v", self.p_v),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("eta_l", self.eta_l),
            ("c", self.c),
            ("gamma", self.gamma),
            ("chi", self.chi),
            ("kappa_s", self.kappa_s),
            ("r10", self.r10),
            ("eps", self.eps),
            ("d", self.d),
            ("omega", self.omega),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.p_ac.is_finite() && self.p_ac >= 0.0) {
            return Err(("p_ac", format!("p_ac must be finite and >= 0, got {}", self.p_ac)));
        }
        if self.p_stat <= self.p_v {
            return Err((
                "p_stat",
                format!("p_stat ({}) must exceed p_v ({})", self.p_stat, self.p_v),
            ));
        }
        let contact = self.r10 * (1.0 + self.eps);
        if self.d <= contact {
            return Err((
                "d",
                format!(
                    "d ({:e} m) must exceed r10*(1+eps) = {:e} m (bubbles overlap)",
                    self.d, contact
                ),
            ));
        }
        Ok(())
    }
}

/// Scales derived from [`PhysicalParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScales {
    /// Effective static pressure `p_stat - p_v` (Pa).
    pub p0: f64,
    /// Natural frequency (rad/s).
    pub omega0: f64,
    /// Drive period `2 pi / omega` (s).
    pub t_drive: f64,
    /// `omega / omega0`.
    pub omega_nd: f64,
    /// `d / R10`.
    pub d_ratio: f64,
}

impl DerivedScales {
    /// Drive period in units of `tau`.
    pub fn period_nd(&self) -> f64 {
        TAU / self.omega_nd
    }
}

/// Computes `p0`, `omega0` and the nondimensional drive frequency.
///
/// `omega0^2 = [3 gamma P0 + 2 (3 gamma - 1) sigma / R10 + 4 chi / R10] / (rho R10^2)`.
pub fn derive_scales(p: &PhysicalParams) -> Result<DerivedScales> {
    p.validate()?;
    let p0 = p.p_stat - p.p_v;
    let radicand = (3.0 * p.gamma * p0
        + 2.0 * (3.0 * p.gamma - 1.0) * p.sigma / p.r10
        + 4.0 * p.chi / p.r10)
        / (p.rho * p.r10 * p.r10);
    if !(radicand.is_finite() && radicand > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "omega0^2 = {radicand:e} is not positive"
        )));
    }
    let omega0 = radicand.sqrt();
    Ok(DerivedScales {
        p0,
        omega0,
        t_drive: TAU / p.omega,
        omega_nd: p.omega / omega0,
        d_ratio: p.d / p.r10,
    })
}

/// Phase point of the autonomous system.
///
/// Deserializes from an object (`theta` optional) or from an array
/// `[r1, u1, r2, u2]` / `[r1, u1, r2, u2, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr")]
pub struct State {
    pub r1: f64,
    pub u1: f64,
    pub r2: f64,
    pub u2: f64,
    pub theta: f64,
}

impl State {
    pub const DIM: usize = 5;

    pub fn new(r1: f64, u1: f64, r2: f64, u2: f64, theta: f64) -> Self {
        State { r1, u1, r2, u2, theta }
    }

    /// Both bubbles at rest at their own equilibrium radii.
    pub fn rest(eps: f64) -> Self {
        State::new(1.0, 0.0, eps, 0.0, 0.0)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.r1, self.u1, self.r2, self.u2, self.theta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        State::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// The four mechanical coordinates `(r1, u1, r2, u2)`.
    pub fn mechanical(&self) -> [f64; 4] {
        [self.r1, self.u1, self.r2, self.u2]
    }

    pub fn wrapped(mut self) -> Self {
        self.theta = wrap_phase(self.theta);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StateRepr {
    Array(Vec<f64>),
    Object {
        r1: f64,
        u1: f64,
        r2: f64,
        u2: f64,
        #[serde(default)]
        theta: f64,
    },
}

impl TryFrom<StateRepr> for State {
    type Error = String;

    fn try_from(repr: StateRepr) -> std::result::Result<Self, String> {
        match repr {
            StateRepr::Array(v) => match v.as_slice() {
                &[r1, u1, r2, u2] => Ok(State::new(r1, u1, r2, u2, 0.0)),
                &[r1, u1, r2, u2, theta] => Ok(State::new(r1, u1, r2, u2, theta)),
                _ => Err(format!("state needs 4 or 5 components, got {}", v.len())),
            },
            StateRepr::Object { r1, u1, r2, u2, theta } => Ok(State::new(r1, u1, r2, u2, theta)),
        }
    }
}

pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Time derivative of a [`State`] per unit `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deriv {
    pub dr1: f64,
    pub du1: f64,
    pub dr2: f64,
    pub du2: f64,
    pub dtheta: f64,
}

impl Deriv {
    pub fn to_array(&self) -> [f64; 5] {
        [self.dr1, self.du1, self.dr2, self.du2, self.dtheta]
    }
}

/// Which of the two bubbles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bubble {
    First,
    Second,
}

impl Bubble {
    pub fn index(self) -> usize {
        match self {
            Bubble::First => 1,
            Bubble::Second => 2,
        }
    }
}

/// Nondimensional groups of the wall-pressure expression. Every pressure
/// coefficient is divided by `rho R10^2 omega0^2`.
#[derive(Debug, Clone, Copy)]
struct Groups {
    /// `(P0 + 2 sigma / R_i0)` scaled, per bubble.
    gas: [f64; 2],
    /// Equilibrium radius of each bubble in units of R10.
    r_eq: [f64; 2],
    poly: f64,
    viscous: f64,
    surface: f64,
    ambient: f64,
    shell_elastic: f64,
    shell_viscous: f64,
    drive: f64,
    sound: f64,
    d_ratio: f64,
    omega_nd: f64,
}

#[derive(Debug, Clone, Copy)]
struct WallPressure {
    value: f64,
    d_r: f64,
    d_u: f64,
    d_theta: f64,
}

/// The coupled-bubble vector field for one parameter point.
#[derive(Debug, Clone, Copy)]
pub struct Model {
    params: PhysicalParams,
    scales: DerivedScales,
    groups: Groups,
    singular_tol: f64,
}

impl Model {
    pub fn new(params: PhysicalParams) -> Result<Self> {
        let scales = derive_scales(&params)?;
        let p = &params;
        let s = p.rho * p.r10 * p.r10 * scales.omega0 * scales.omega0;
        let r20 = p.eps * p.r10;
        let groups = Groups {
            gas: [
                (scales.p0 + 2.0 * p.sigma / p.r10) / s,
                (scales.p0 + 2.0 * p.sigma / r20) / s,
            ],
            r_eq: [1.0, p.eps],
            poly: 3.0 * p.gamma,
            viscous: 4.0 * p.eta_l / (p.rho * p.r10 * p.r10 * scales.omega0),
            surface: 2.0 * p.sigma / (p.r10 * s),
            ambient: scales.p0 / s,
            shell_elastic: 4.0 * p.chi / (p.r10 * s),
            shell_viscous: 4.0 * p.kappa_s / (p.rho * p.r10.powi(3) * scales.omega0),
            drive: p.p_ac / s,
            sound: p.c / (p.r10 * scales.omega0),
            d_ratio: scales.d_ratio,
            omega_nd: scales.omega_nd,
        };
        Ok(Model {
            params,
            scales,
            groups,
            singular_tol: DEFAULT_SINGULAR_TOL,
        })
    }

    pub fn with_singular_tol(mut self, tol: f64) -> Self {
        self.singular_tol = tol;
        self
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn scales(&self) -> &DerivedScales {
        &self.scales
    }

    /// Drive period in `tau` units.
    pub fn period(&self) -> f64 {
        self.scales.period_nd()
    }

    /// Nondimensional sound speed `c / (R10 omega0)`.
    pub fn sound_speed_nd(&self) -> f64 {
        self.groups.sound
    }

    /// True when the bubbles are identical and the swap symmetry holds.
    pub fn is_symmetric(&self) -> bool {
        self.params.eps == 1.0
    }

    /// Wall pressure of one bubble, scaled by `rho R10^2 omega0^2`.
    pub fn shell_pressure(&self, r: f64, u: f64, bubble: Bubble, theta: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!(
                "radius of bubble {} must be positive, got {r}",
                bubble.index()
            )));
        }
        Ok(self.wall_pressure(r, u, bubble.index() - 1, theta).value)
    }

    fn wall_pressure(&self, r: f64, u: f64, i: usize, theta: f64) -> WallPressure {
        let g = &self.groups;
        let inv = 1.0 / r;
        let gas = g.gas[i] * (g.r_eq[i] * inv).powf(g.poly);
        let (sin, cos) = theta.sin_cos();
        let value = gas - g.viscous * u * inv - g.surface * inv - g.ambient
            - g.shell_elastic * (1.0 / g.r_eq[i] - inv)
            - g.shell_viscous * u * inv * inv
            - g.drive * sin;
        let d_r = -g.poly * gas * inv
            + (g.viscous * u + g.surface - g.shell_elastic) * inv * inv
            + 2.0 * g.shell_viscous * u * inv * inv * inv;
        let d_u = -g.viscous * inv - g.shell_viscous * inv * inv;
        WallPressure {
            value,
            d_r,
            d_u,
            d_theta: -g.drive * cos,
        }
    }

    /// Solves the two coupled equations for the radial accelerations.
    ///
    /// The accelerations enter linearly: directly on the left, through
    /// `dP_i/dt` via the velocity-dependent damping terms, and through the
    /// time derivative of the neighbour's radiated pressure.
    pub fn acceleration(&self, x: &State) -> Result<(f64, f64)> {
        let (r, u) = ([x.r1, x.r2], [x.u1, x.u2]);
        for i in 0..2 {
            if !(r[i] >= RADIUS_FLOOR) {
                return Err(Error::RadiusFloor {
                    bubble: i + 1,
                    radius: r[i],
                });
            }
        }
        let g = &self.groups;
        let mut a = [[0.0; 2]; 2];
        let mut b = [0.0; 2];
        for i in 0..2 {
            let j = 1 - i;
            let w = self.wall_pressure(r[i], u[i], i, x.theta);
            let mach = u[i] / g.sound;
            a[i][i] = (1.0 - mach) * r[i] - r[i] / g.sound * w.d_u;
            a[i][j] = r[j] * r[j] / g.d_ratio;
            b[i] = (1.0 + mach) * w.value
                + r[i] / g.sound * (w.d_r * u[i] + w.d_theta * g.omega_nd)
                - 1.5 * (1.0 - mach / 3.0) * u[i] * u[i]
                - 2.0 * r[j] * u[j] * u[j] / g.d_ratio;
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let norm2: f64 = a.iter().flatten().map(|v| v * v).sum();
        let threshold = self.singular_tol * norm2;
        if !(det.abs() > threshold) {
            return Err(Error::NearSingular { det, threshold });
        }
        let a1 = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
        let a2 = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
        Ok((a1, a2))
    }

    pub fn vector_field(&self, x: &State) -> Result<Deriv> {
        let (a1, a2) = self.acceleration(x)?;
        Ok(Deriv {
            dr1: x.u1,
            du1: a1,
            dr2: x.u2,
            du2: a2,
            dtheta: self.groups.omega_nd,
        })
    }

    /// Array form of [`Model::vector_field`] used by the integrator.
    pub fn rhs(&self, x: &[f64; 5]) -> Result<[f64; 5]> {
        self.vector_field(&State::from_array(*x)).map(|d| d.to_array())
    }

    /// Central-difference Jacobian, `jac[row][col] = dF_row / dx_col`.
    ///
    /// Step for component `k` is `h_rel * max(|x_k|, 1)`.
    pub fn jacobian(&self, x: &State, h_rel: f64) -> Result<[[f64; 5]; 5]> {
        self.jacobian_array(&x.to_array(), h_rel)
    }

    pub fn jacobian_array(&self, x: &[f64; 5], h_rel: f64) -> Result<[[f64; 5]; 5]> {
        let mut jac = [[0.0; 5]; 5];
        for k in 0..5 {
            let h = h_rel * x[k].abs().max(1.0);
            let mut plus = *x;
            let mut minus = *x;
            plus[k] += h;
            minus[k] -= h;
            let fp = self.rhs(&plus)?;
            let fm = self.rhs(&minus)?;
            let width = plus[k] - minus[k];
            for row in 0..4 {
                jac[row][k] = (fp[row] - fm[row]) / width;
            }
        }
        Ok(jac)
    }
}

/// Default relative step of the finite-difference Jacobian.
pub const DEFAULT_JACOBIAN_H_REL: f64 = 1e-6;

/// Exchanges the two bubbles.
pub fn swap(x: &State) -> State {
    State::new(x.r2, x.u2, x.r1, x.u1, x.theta)
}

/// Distance from the synchronization manifold `r1 = r2, u1 = u2`.
pub fn sync_deviation(x: &State) -> f64 {
    (x.r1 - x.r2).hypot(x.u1 - x.u2)
}
