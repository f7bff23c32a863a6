//! Numerical toolkit for the saturated L2-critical generalized KdV equation
//!
//! ```text
//! u_t + (u_xx + u^5 - gamma u |u|^(q-1))_x = 0,   q > 5
//! ```
//!
//! The modules follow the analysis pipeline: ground states and their
//! linearization, the nonlocal profile, a periodic pseudo-spectral solver,
//! modulation tracking, and the reduced parameter dynamics.

pub mod grid;
pub mod ode;
pub mod banded;
pub mod groundstate;
pub mod linearized;
pub mod profile;
pub mod evolution;
pub mod modulation;
pub mod reduced;

/// Scaling exponent `m = (q - 5) / 2` of the saturation term.
pub fn saturation_exponent(q: f64) -> f64 {
    (q - 5.0) / 2.0
}

/// `sign(u) |u|^p`, the odd power used by the saturating nonlinearity.
#[inline]
pub fn odd_pow(u: f64, p: f64) -> f64 {
    if p == 7.0 {
        let u2 = u * u;
        u2 * u2 * u2 * u
    } else if p == 9.0 {
        let u2 = u * u;
        let u4 = u2 * u2;
        u4 * u4 * u
    } else {
        u.signum() * u.abs().powf(p)
    }
}

/// `|u|^p` with fast paths for the integer exponents used in practice.
#[inline]
pub fn abs_pow(u: f64, p: f64) -> f64 {
    if p == 8.0 {
        let u2 = u * u;
        let u4 = u2 * u2;
        u4 * u4
    } else if p == 6.0 {
        let u2 = u * u;
        u2 * u2 * u2
    } else if p == 10.0 {
        let u2 = u * u;
        let u4 = u2 * u2;
        u4 * u4 * u2
    } else {
        u.abs().powf(p)
    }
}

/// Long-time behaviour of a trajectory near the soliton family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Soliton,
    BlowDown,
    Exit,
    Undetermined,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Soliton => "soliton",
            Regime::BlowDown => "blow-down",
            Regime::Exit => "exit",
            Regime::Undetermined => "undetermined",
        })
    }
}
