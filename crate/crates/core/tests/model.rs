use std::f64::consts::PI;

use bubblepair::{derive_scales, swap, Bubble, Error, Model, PhysicalParams, State};
use proptest::prelude::*;

// Reference values from a 40-digit symbolic solve of the dimensional equations.
const OMEGA0: f64 = 19806006.18986197691484271389655847254204;
const OMEGA_ND: f64 = 1.449055388798704757717021997479208946877;
const PERIOD_ND: f64 = 4.336055996029572006373193900949683273184;
const SOUND_ND: f64 = 44.03174546629238182836749445382897294213;
const WALL_PRESSURE: f64 = -0.5622700223178050831552038025159013313323;
const ACCEL_SYM: (f64, f64) = (-0.9751248890857225903689932362959090831322, -0.8381796229795736905036692424600632577466);
const ACCEL_ASYM: (f64, f64) = (-1.162930291218304353996185300990070094100, -0.9930449402831295637604483590611986906814);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn scales_match_reference() {
    let s = derive_scales(&PhysicalParams::default()).unwrap();
    assert!(rel(s.omega0, OMEGA0) < 1e-14, "{}", s.omega0);
    assert!(rel(s.omega_nd, OMEGA_ND) < 1e-14);
    assert!(rel(s.period_nd(), PERIOD_ND) < 1e-14);
    let m = Model::new(PhysicalParams::default()).unwrap();
    assert!(rel(m.sound_speed_nd(), SOUND_ND) < 1e-14);
    assert!(rel(m.period(), PERIOD_ND) < 1e-14);
}

#[test]
fn wall_pressure_matches_reference() {
    let m = Model::new(PhysicalParams::default()).unwrap();
    let p = m.shell_pressure(0.9, 0.1, Bubble::First, 0.7).unwrap();
    assert!(rel(p, WALL_PRESSURE) < 1e-13, "{p}");
}

#[test]
fn acceleration_matches_reference() {
    let x = State::new(1.05, 0.2, 0.95, -0.1, PI / 3.0);
    let m = Model::new(PhysicalParams::default()).unwrap();
    let (a1, a2) = m.acceleration(&x).unwrap();
    assert!(rel(a1, ACCEL_SYM.0) < 1e-12 && rel(a2, ACCEL_SYM.1) < 1e-12, "{a1} {a2}");

    let p = PhysicalParams::default().with_eps(1.03).with_d_ratio(13.0).with_p_ac(1.5e6);
    let m = Model::new(p).unwrap();
    let (a1, a2) = m.acceleration(&x).unwrap();
    assert!(rel(a1, ACCEL_ASYM.0) < 1e-12 && rel(a2, ACCEL_ASYM.1) < 1e-12, "{a1} {a2}");
}

#[test]
fn shell_pressure_domain() {
    let m = Model::new(PhysicalParams::default()).unwrap();
    assert!(matches!(m.shell_pressure(0.0, 0.0, Bubble::Second, 0.0), Err(Error::Domain(_))));
    assert!(matches!(m.shell_pressure(-1.0, 0.0, Bubble::First, 0.0), Err(Error::Domain(_))));
}

#[test]
fn radius_floor_reported() {
    let m = Model::new(PhysicalParams::default()).unwrap();
    let err = m.acceleration(&State::new(1.0, 0.0, 0.005, 0.0, 0.0)).unwrap_err();
    assert!(matches!(err, Error::RadiusFloor { bubble: 2, .. }), "{err:?}");
    assert!(err.is_breakdown());
}

#[test]
fn invalid_parameters_rejected() {
    let p = PhysicalParams::default();
    assert!(Model::new(p.with_eps(0.0)).is_err());
    assert!(Model::new(p.with_d_ratio(1.5)).is_err());
    assert!(Model::new(p.with_p_ac(-1.0)).is_err());
    assert!(Model::new(PhysicalParams { p_v: 2e5, ..p }).is_err());
}

/// Residual of the first equation, with `dP/dt` taken by a five-point
/// difference along the straight-line motion `r + u s`, `u + a s`, `theta + w s`.
fn residual(m: &Model, x: &State, acc: (f64, f64)) -> (f64, f64) {
    let c = m.sound_speed_nd();
    let d = m.params().d_ratio();
    let w = m.scales().omega_nd;
    let r = [x.r1, x.r2];
    let u = [x.u1, x.u2];
    let a = [acc.0, acc.1];
    let bubbles = [Bubble::First, Bubble::Second];
    let mut out = [0.0; 2];
    for i in 0..2 {
        let j = 1 - i;
        let p_at = |s: f64| m.shell_pressure(r[i] + u[i] * s, u[i] + a[i] * s, bubbles[i], x.theta + w * s).unwrap();
        let h = 1e-3;
        let dp = (-p_at(2.0 * h) + 8.0 * p_at(h) - 8.0 * p_at(-h) + p_at(-2.0 * h)) / (12.0 * h);
        let lhs = (1.0 - u[i] / c) * r[i] * a[i] + 1.5 * (1.0 - u[i] / (3.0 * c)) * u[i] * u[i];
        let rhs = (1.0 + u[i] / c) * p_at(0.0) + r[i] / c * dp - (2.0 * r[j] * u[j] * u[j] + r[j] * r[j] * a[j]) / d;
        let scale = lhs.abs().max(rhs.abs()).max((r[i] * a[i]).abs()).max(1.0);
        out[i] = (lhs - rhs).abs() / scale;
    }
    (out[0], out[1])
}

fn states() -> impl Strategy<Value = State> {
    (0.5..1.8f64, -1.0..1.0f64, 0.5..1.8f64, -1.0..1.0f64, 0.0..(2.0 * PI))
        .prop_map(|(r1, u1, r2, u2, th)| State::new(r1, u1, r2, u2, th))
}

fn params() -> impl Strategy<Value = PhysicalParams> {
    (0.95..1.05f64, 6.0..35.0f64, 0.0..1.8e6f64)
        .prop_map(|(eps, dr, pac)| PhysicalParams::default().with_eps(eps).with_d_ratio(dr).with_p_ac(pac))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn acceleration_satisfies_equations(p in params(), x in states()) {
        let m = Model::new(p).unwrap();
        let acc = m.acceleration(&x).unwrap();
        let (e1, e2) = residual(&m, &x, acc);
        prop_assert!(e1 < 1e-9 && e2 < 1e-9, "residuals {e1} {e2}");
    }

    #[test]
    fn swap_equivariance(dr in 6.0..35.0f64, pac in 0.0..1.8e6f64, x in states()) {
        let m = Model::new(PhysicalParams::default().with_d_ratio(dr).with_p_ac(pac)).unwrap();
        let f = m.vector_field(&x).unwrap().to_array();
        let g = m.vector_field(&swap(&x)).unwrap().to_array();
        let fs = [f[2], f[3], f[0], f[1], f[4]];
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = g.iter().zip(fs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-12 * norm);
    }

    #[test]
    fn synchronous_manifold_is_invariant(dr in 6.0..35.0f64, pac in 0.0..1.8e6f64, r in 0.5..1.8f64, u in -1.0..1.0f64, th in 0.0..6.28f64) {
        let m = Model::new(PhysicalParams::default().with_d_ratio(dr).with_p_ac(pac)).unwrap();
        let (a1, a2) = m.acceleration(&State::new(r, u, r, u, th)).unwrap();
        prop_assert_eq!(a1, a2);
    }

    #[test]
    fn rest_is_equilibrium(eps in 0.9..1.1f64, dr in 6.0..35.0f64) {
        let m = Model::new(PhysicalParams::default().with_eps(eps).with_d_ratio(dr).with_p_ac(0.0)).unwrap();
        let (a1, a2) = m.acceleration(&State::rest(eps)).unwrap();
        prop_assert!(a1.abs() < 1e-12 && a2.abs() < 1e-12);
    }

    #[test]
    fn jacobian_second_order(x in states()) {
        let m = Model::new(PhysicalParams::default()).unwrap();
        // Richardson: the error of a central difference drops fourfold per halving.
        let j1 = m.jacobian(&x, 4e-3).unwrap();
        let j2 = m.jacobian(&x, 2e-3).unwrap();
        let j3 = m.jacobian(&x, 1e-3).unwrap();
        let mut ratios = Vec::new();
        for r in 0..5 {
            for c in 0..5 {
                let e1 = (j1[r][c] - j2[r][c]).abs();
                let e2 = (j2[r][c] - j3[r][c]).abs();
                if e2 > 1e-9 * j3[r][c].abs().max(1.0) {
                    ratios.push(e1 / e2);
                }
            }
        }
        for q in ratios {
            prop_assert!((3.0..5.0).contains(&q), "ratio {q}");
        }
    }
}

#[test]
fn jacobian_kinematic_rows() {
    let m = Model::new(PhysicalParams::default()).unwrap();
    let j = m.jacobian(&State::new(1.1, 0.3, 0.9, -0.2, 1.0), 1e-6).unwrap();
    let expect_row0 = [0.0, 1.0, 0.0, 0.0, 0.0];
    let expect_row2 = [0.0, 0.0, 0.0, 1.0, 0.0];
    for c in 0..5 {
        assert!((j[0][c] - expect_row0[c]).abs() < 1e-9);
        assert!((j[2][c] - expect_row2[c]).abs() < 1e-9);
        assert_eq!(j[4][c], 0.0);
    }
}
