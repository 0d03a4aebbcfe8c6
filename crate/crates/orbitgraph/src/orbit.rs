//! Clohessy-Wiltshire relative motion about a circular chief orbit.
//!
//! The closed-form state transition is the workhorse for dataset
//! generation and the position-consistency loss term; the RK4 integrator
//! exists purely as an independent oracle for it.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Standard gravitational parameter of Earth, km^3/s^2.
pub const EARTH_MU: f64 = 398_600.4418;

/// Mean motion `sqrt(mu / a^3)` of a circular orbit, rad/s.
pub fn mean_motion<T: Real>(semi_major_axis: T, mu: T) -> Result<T> {
    if semi_major_axis <= T::zero() || mu <= T::zero() {
        return Err(Error::Domain(format!(
            "mean motion needs positive a and mu, got a={semi_major_axis}, mu={mu}"
        )));
    }
    Ok((mu / semi_major_axis.powi(3)).sqrt())
}

/// Circular chief orbit defining the LVLH frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiefOrbit<T> {
    /// Semi-major axis, km.
    pub a: T,
    /// Gravitational parameter, km^3/s^2.
    pub mu: T,
    /// Mean motion, rad/s.
    pub n: T,
}

impl<T: Real> ChiefOrbit<T> {
    pub fn new(a: T, mu: T) -> Result<Self> {
        let n = mean_motion(a, mu)?;
        Ok(ChiefOrbit { a, mu, n })
    }

    /// Validate the `n == sqrt(mu/a^3)` invariant of externally supplied
    /// values (e.g. loaded from a dataset file).
    pub fn validate(&self) -> Result<()> {
        let expected = mean_motion(self.a, self.mu)?;
        let rel = (self.n - expected).abs() / expected;
        if rel > T::of(1e-12) {
            return Err(Error::Contract(format!(
                "chief orbit mean motion {} inconsistent with sqrt(mu/a^3) = {}",
                self.n, expected
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> T {
        T::of(std::f64::consts::TAU) / self.n
    }
}

/// Deputy state relative to the chief in the LVLH frame:
/// x radial, y in-track, z cross-track; km and km/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeState<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub vx: T,
    pub vy: T,
    pub vz: T,
}

impl<T: Real> RelativeState<T> {
    pub fn new(x: T, y: T, z: T, vx: T, vy: T, vz: T) -> Self {
        RelativeState { x, y, z, vx, vy, vz }
    }

    pub fn to_array(self) -> [T; 6] {
        [self.x, self.y, self.z, self.vx, self.vy, self.vz]
    }

    pub fn from_array(a: [T; 6]) -> Self {
        RelativeState::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn position(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn velocity(&self) -> [T; 3] {
        [self.vx, self.vy, self.vz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Closed-form propagation of the CW equations by `t` seconds.
pub fn cw_propagate<T: Real>(s0: &RelativeState<T>, n: T, t: T) -> Result<RelativeState<T>> {
    if n <= T::zero() {
        return Err(Error::Domain(format!("mean motion must be positive, got {n}")));
    }
    let nt = n * t;
    let (sin, cos) = (nt.sin(), nt.cos());
    let one = T::one();
    let c2 = T::of(2.0);
    let c3 = T::of(3.0);
    let c4 = T::of(4.0);
    let c6 = T::of(6.0);

    let x = (c4 - c3 * cos) * s0.x + sin / n * s0.vx + c2 / n * (one - cos) * s0.vy;
    let y = c6 * s0.x * (sin - nt) + s0.y - c2 / n * (one - cos) * s0.vx
        + (c4 * sin - c3 * nt) / n * s0.vy;
    let z = s0.z * cos + sin / n * s0.vz;
    let vx = c3 * n * sin * s0.x + cos * s0.vx + c2 * sin * s0.vy;
    let vy = c6 * n * (cos - one) * s0.x - c2 * sin * s0.vx + (c4 * cos - c3) * s0.vy;
    let vz = -n * sin * s0.z + cos * s0.vz;

    Ok(RelativeState::new(x, y, z, vx, vy, vz))
}

/// CW acceleration at a state: `(3n^2 x + 2n vy, -2n vx, -n^2 z)`.
pub fn cw_acceleration<T: Real>(s: &RelativeState<T>, n: T) -> [T; 3] {
    let c2 = T::of(2.0);
    let c3 = T::of(3.0);
    [
        c3 * n * n * s.x + c2 * n * s.vy,
        -c2 * n * s.vx,
        -n * n * s.z,
    ]
}

/// State-transition matrix of the closed form: the row-state convention is
/// `s(t) = s(0) * transition(n, t)^T`, so a batch of N states stored as an
/// N x 6 matrix advances with one right-multiplication by this transpose.
pub fn cw_transition<T: Real>(n: T, t: T) -> Matrix<T> {
    let nt = n * t;
    let (sin, cos) = (nt.sin(), nt.cos());
    let one = T::one();
    let zero = T::zero();
    let c2 = T::of(2.0);
    let c3 = T::of(3.0);
    let c4 = T::of(4.0);
    let c6 = T::of(6.0);
    Matrix::from_rows(&[
        vec![c4 - c3 * cos, zero, zero, sin / n, c2 / n * (one - cos), zero],
        vec![
            c6 * (sin - nt),
            one,
            zero,
            -c2 / n * (one - cos),
            (c4 * sin - c3 * nt) / n,
            zero,
        ],
        vec![zero, zero, cos, zero, zero, sin / n],
        vec![c3 * n * sin, zero, zero, cos, c2 * sin, zero],
        vec![c6 * n * (cos - one), zero, zero, -c2 * sin, c4 * cos - c3, zero],
        vec![zero, zero, -n * sin, zero, zero, cos],
    ])
    .expect("fixed 6x6 shape")
}

/// Acceleration map of the CW differential form: `a = s * accel_map(n)^T`
/// for row states, mirroring [`cw_transition`].
pub fn cw_accel_map<T: Real>(n: T) -> Matrix<T> {
    let zero = T::zero();
    let c2 = T::of(2.0);
    let c3 = T::of(3.0);
    Matrix::from_rows(&[
        vec![c3 * n * n, zero, zero, zero, c2 * n, zero],
        vec![zero, zero, zero, -c2 * n, zero, zero],
        vec![zero, zero, -n * n, zero, zero, zero],
    ])
    .expect("fixed 3x6 shape")
}

fn cw_derivative<T: Real>(s: &RelativeState<T>, n: T) -> [T; 6] {
    let a = cw_acceleration(s, n);
    [s.vx, s.vy, s.vz, a[0], a[1], a[2]]
}

/// Classical fixed-step RK4 integration of the CW ordinary differential
/// equations. Oracle only; the closed form is the production path.
pub fn cw_rk4_propagate<T: Real>(
    s0: &RelativeState<T>,
    n: T,
    t: T,
    step: T,
) -> Result<RelativeState<T>> {
    if n <= T::zero() {
        return Err(Error::Domain(format!("mean motion must be positive, got {n}")));
    }
    if step <= T::zero() {
        return Err(Error::Contract(format!("rk4 step must be positive, got {step}")));
    }
    if t < T::zero() {
        return Err(Error::Contract(format!("rk4 horizon must be non-negative, got {t}")));
    }
    if step > t && t > T::zero() {
        return Err(Error::Contract(format!(
            "rk4 step {step} exceeds integration horizon {t}"
        )));
    }

    let half = T::of(0.5);
    let sixth = T::one() / T::of(6.0);
    let two = T::of(2.0);

    let mut state = *s0;
    let mut remaining = t;
    while remaining > T::zero() {
        let h = step.min(remaining);
        let y = state.to_array();

        let k1 = cw_derivative(&state, n);
        let k2 = cw_derivative(&offset(&y, &k1, h * half), n);
        let k3 = cw_derivative(&offset(&y, &k2, h * half), n);
        let k4 = cw_derivative(&offset(&y, &k3, h), n);

        let mut next = y;
        for i in 0..6 {
            next[i] = y[i] + h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        state = RelativeState::from_array(next);
        remaining = remaining - h;
    }
    Ok(state)
}

fn offset<T: Real>(y: &[T; 6], k: &[T; 6], h: T) -> RelativeState<T> {
    let mut out = [T::zero(); 6];
    for i in 0..6 {
        out[i] = y[i] + h * k[i];
    }
    RelativeState::from_array(out)
}
