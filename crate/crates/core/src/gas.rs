//! Isentropic gas thermodynamics.
//!
//! The pressure law is `p(ρ) = A ρ^γ`. The specific enthalpy is taken with
//! a zero additive constant, `h(ρ) = γA/(γ−1) ρ^(γ−1)`, since only enthalpy
//! differences enter the Bernoulli relation `B = |u|²/2 + h(ρ)`.
//!
//! Other barotropic laws can be plugged in through [`PressureLaw`]; the
//! default [`PressureLaw::enthalpy_inverse`] inverts `h` numerically, so a
//! new law only has to supply `p`, `p'` and `h`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::{bisect, newton_bisect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GasError {
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("enthalpy argument {value} is outside the range of h (vacuum or overexpanded state)")]
    OutOfRange { value: f64 },
    #[error("no sonic state exists for Bernoulli constant {0}")]
    NoSonicState(f64),
    #[error("flux density {flux} exceeds the critical flux {critical}")]
    Supercritical { flux: f64, critical: f64 },
    #[error("invalid gas model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, GasError>;

/// A barotropic pressure law with `p' > 0` and `p'' > 0`.
pub trait PressureLaw {
    fn pressure(&self, rho: f64) -> f64;
    fn pressure_derivative(&self, rho: f64) -> f64;
    fn enthalpy(&self, rho: f64) -> f64;

    fn enthalpy_derivative(&self, rho: f64) -> f64 {
        self.pressure_derivative(rho) / rho
    }

    /// `H = h⁻¹` by safeguarded Newton on a bracket grown geometrically.
    fn enthalpy_inverse(&self, h: f64) -> Result<f64> {
        if !(h > self.enthalpy(f64::MIN_POSITIVE)) || !h.is_finite() {
            return Err(GasError::OutOfRange { value: h });
        }
        let mut hi = 1.0;
        while self.enthalpy(hi) < h {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(GasError::OutOfRange { value: h });
            }
        }
        let mut lo = hi;
        while self.enthalpy(lo) > h {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(GasError::OutOfRange { value: h });
            }
        }
        newton_bisect(
            |r| self.enthalpy(r) - h,
            |r| self.enthalpy_derivative(r),
            lo,
            hi,
            1e-13,
            500,
        )
        .ok_or(GasError::OutOfRange { value: h })
    }
}

/// Polytropic gas `p = A ρ^γ` together with the Bernoulli constant `B̄`
/// of the background state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub gamma: f64,
    pub entropy_const: f64,
    pub bernoulli_const: f64,
}

impl Default for GasModel {
    /// γ = 2, A = 1/2, B̄ = 3/2: the normalized gas with `h(ρ) = ρ`,
    /// critical speed 1 and critical density 1.
    fn default() -> Self {
        Self {
            gamma: 2.0,
            entropy_const: 0.5,
            bernoulli_const: 1.5,
        }
    }
}

impl PressureLaw for GasModel {
    fn pressure(&self, rho: f64) -> f64 {
        self.entropy_const * rho.powf(self.gamma)
    }

    fn pressure_derivative(&self, rho: f64) -> f64 {
        self.entropy_const * self.gamma * rho.powf(self.gamma - 1.0)
    }

    fn enthalpy(&self, rho: f64) -> f64 {
        self.gamma * self.entropy_const / (self.gamma - 1.0) * rho.powf(self.gamma - 1.0)
    }

    fn enthalpy_inverse(&self, h: f64) -> Result<f64> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(GasError::OutOfRange { value: h });
        }
        let g1 = self.gamma - 1.0;
        Ok(((g1 * h) / (self.gamma * self.entropy_const)).powf(1.0 / g1))
    }
}

impl GasModel {
    pub fn new(gamma: f64, entropy_const: f64, bernoulli_const: f64) -> Result<Self> {
        let model = Self {
            gamma,
            entropy_const,
            bernoulli_const,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(GasError::InvalidModel(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        if !(self.entropy_const > 0.0) || !self.entropy_const.is_finite() {
            return Err(GasError::InvalidModel(format!(
                "entropy_const must be positive, got {}",
                self.entropy_const
            )));
        }
        if !(self.bernoulli_const > 0.0) || !self.bernoulli_const.is_finite() {
            return Err(GasError::InvalidModel(format!(
                "bernoulli_const must be positive, got {}",
                self.bernoulli_const
            )));
        }
        Ok(())
    }

    /// Same gas with a different Bernoulli constant.
    pub fn with_bernoulli(&self, b: f64) -> Self {
        Self {
            bernoulli_const: b,
            ..*self
        }
    }

    pub fn sound_speed(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(GasError::NonPositiveDensity(rho));
        }
        Ok(self.pressure_derivative(rho).sqrt())
    }

    /// `ρ = H(B − q²/2)`.
    pub fn density_from_speed(&self, q_sq: f64, b: f64) -> Result<f64> {
        self.enthalpy_inverse(b - 0.5 * q_sq)
    }

    /// Speed at which `|u| = c(ρ)` on the Bernoulli surface `B`.
    pub fn critical_speed(&self, b: f64) -> Result<f64> {
        if !(b > 0.0) {
            return Err(GasError::NoSonicState(b));
        }
        // g(q) = q² − c²(H(B − q²/2)) goes from −c²(H(B)) < 0 to +∞ at q → √(2B).
        let qmax = (2.0 * b).sqrt();
        let g = |q: f64| match self.density_from_speed(q * q, b) {
            Ok(rho) => q * q - self.pressure_derivative(rho),
            Err(_) => q * q,
        };
        bisect(g, 0.0, qmax * (1.0 - 1e-15), 1e-15 * qmax, 400).ok_or(GasError::NoSonicState(b))
    }

    /// Mass flux density `j(q) = ρ(q²) q`.
    pub fn mass_flux(&self, q: f64, b: f64) -> Result<f64> {
        Ok(self.density_from_speed(q * q, b)? * q)
    }

    /// Inverse of [`Self::mass_flux`] on the subsonic branch `[0, c*]`.
    pub fn subsonic_speed_from_flux(&self, j: f64, b: f64) -> Result<f64> {
        let c_star = self.critical_speed(b)?;
        let j_star = self.mass_flux(c_star, b)?;
        if j < 0.0 || !j.is_finite() {
            return Err(GasError::OutOfRange { value: j });
        }
        if j > j_star * (1.0 + 1e-14) {
            return Err(GasError::Supercritical {
                flux: j,
                critical: j_star,
            });
        }
        if j == 0.0 {
            return Ok(0.0);
        }
        if j >= j_star {
            return Ok(c_star);
        }
        // j'(q) = ρ (1 − q²/c²) on the subsonic branch.
        let f = |q: f64| self.mass_flux(q, b).unwrap_or(f64::NAN) - j;
        let df = |q: f64| {
            let rho = self.density_from_speed(q * q, b).unwrap_or(f64::NAN);
            rho * (1.0 - q * q / self.pressure_derivative(rho))
        };
        newton_bisect(f, df, 0.0, c_star, 1e-15, 500).ok_or(GasError::Supercritical {
            flux: j,
            critical: j_star,
        })
    }

    /// Truncated density `ρ_m(s) = ρ(c*² ζ_m(s/c*²))` on the background
    /// Bernoulli surface. With the normalized gas (c* = 1) this is exactly
    /// `ρ(ζ_m(s))`.
    pub fn truncated_density(&self, trunc: &Truncation, q_sq: f64) -> Result<f64> {
        let b = self.bernoulli_const;
        let c2 = self.critical_speed(b)?.powi(2);
        self.density_from_speed(c2 * trunc.zeta(q_sq / c2), b)
    }

    /// `c*²` for the background Bernoulli constant.
    pub fn critical_speed_sq(&self) -> Result<f64> {
        Ok(self.critical_speed(self.bernoulli_const)?.powi(2))
    }
}

/// Speed-squared truncation `ζ_m`.
///
/// `ζ_m(s) = s` for `s ≤ 1 − 1/m`, `ζ_m(s) = 1 − 2/(3m)` for
/// `s ≥ 1 − 1/(2m)`, joined by the quintic
/// `p(t) = t + (2/3)t³ − 2t⁴ + t⁵` in the normalized bridge variable.
/// `p` matches value, slope and curvature at both ends, and
/// `p'(t) = (1 − t)²(5t² + 2t + 1) ≥ 0`, so no clamping is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub m: u32,
}

impl Truncation {
    pub fn new(m: u32) -> Result<Self> {
        if m < 2 {
            return Err(GasError::InvalidModel(format!(
                "truncation index must be at least 2, got {m}"
            )));
        }
        Ok(Self { m })
    }

    /// Speed-squared threshold below which the truncation is inactive.
    pub fn inactive_below(&self) -> f64 {
        1.0 - 1.0 / self.m as f64
    }

    fn bridge(&self) -> (f64, f64) {
        let m = self.m as f64;
        (1.0 - 1.0 / m, 0.5 / m)
    }

    pub fn zeta(&self, s: f64) -> f64 {
        let (a, w) = self.bridge();
        if s <= a {
            s
        } else if s >= a + w {
            1.0 - 2.0 / (3.0 * self.m as f64)
        } else {
            let t = (s - a) / w;
            a + w * (t + t.powi(3) * (2.0 / 3.0 - 2.0 * t + t * t))
        }
    }

    pub fn zeta_derivative(&self, s: f64) -> f64 {
        let (a, w) = self.bridge();
        if s <= a {
            1.0
        } else if s >= a + w {
            0.0
        } else {
            let t = (s - a) / w;
            (1.0 - t).powi(2) * (5.0 * t * t + 2.0 * t + 1.0)
        }
    }
}

/// Density as a function of speed squared on the background Bernoulli
/// surface, optionally truncated. The critical speed is computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityLaw {
    pub gas: GasModel,
    pub trunc: Option<Truncation>,
    c_star_sq: f64,
}

impl DensityLaw {
    pub fn new(gas: GasModel, trunc: Option<Truncation>) -> Result<Self> {
        gas.validate()?;
        Ok(Self {
            gas,
            trunc,
            c_star_sq: gas.critical_speed_sq()?,
        })
    }

    pub fn critical_speed_sq(&self) -> f64 {
        self.c_star_sq
    }

    pub fn density(&self, q_sq: f64) -> Result<f64> {
        let s = match &self.trunc {
            Some(t) => self.c_star_sq * t.zeta(q_sq / self.c_star_sq),
            None => q_sq,
        };
        self.gas.density_from_speed(s, self.gas.bernoulli_const)
    }

    /// Untruncated density, used for Mach numbers.
    pub fn physical_density(&self, q_sq: f64) -> Result<f64> {
        self.gas.density_from_speed(q_sq, self.gas.bernoulli_const)
    }
}
