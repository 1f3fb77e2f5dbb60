//! Client-side pipeline: clip, Sign-Gaussian randomization, bit encoding and
//! share splitting, plus validation of the noise bound.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ring::{split, split_with_mask, Modulus, RingElement, ShareVector};

pub use crate::mac::IntegrityPolicy;

/// Scale factor turning a MAD into a consistent estimate of a Gaussian
/// standard deviation.
pub const C_MAD: f64 = 1.4826;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Normalized trust-weighted sum of sign vectors.
    #[default]
    Weighted,
    /// Coordinate-wise sign of the unnormalized weighted sum.
    Sign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    /// Per-coordinate clip bound `C`.
    pub clip: f64,
    /// Per-coordinate sensitivity; `2C` for a coordinate clamp.
    pub sensitivity: f64,
    pub lambda_mad: f64,
    pub modulus: Modulus,
    pub output_mode: OutputMode,
    pub integrity: IntegrityPolicy,
}

impl RainParams {
    /// Parameters with `Δ_g = 2C` and σ set just above the noise bound.
    pub fn with_auto_sigma(epsilon: f64, clip: f64, lambda_mad: f64) -> Self {
        let sensitivity = 2.0 * clip;
        let mut p = RainParams {
            epsilon,
            delta: 0.0,
            sigma: 1.0,
            clip,
            sensitivity,
            lambda_mad,
            modulus: Modulus::mersenne61(),
            output_mode: OutputMode::Weighted,
            integrity: IntegrityPolicy::Halt,
        };
        p.sigma = p.dp_report(clip).bound() * 1.01;
        p
    }

    pub fn c_mad(&self) -> f64 {
        C_MAD
    }

    /// Range checks on every field. The noise bound is checked separately by
    /// [`validate_dp`] so callers can surface its report.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon", self.epsilon),
            ("sigma", self.sigma),
            ("clip", self.clip),
            ("sensitivity", self.sensitivity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in [0, 1), got {}",
                self.delta
            )));
        }
        if !(self.lambda_mad.is_finite() && self.lambda_mad >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_mad must be >= 0, got {}",
                self.lambda_mad
            )));
        }
        Ok(())
    }

    pub fn dp_report(&self, max_abs_g: f64) -> DpReport {
        validate_dp(self, max_abs_g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpTerm {
    /// `2|g|/3`
    Magnitude,
    /// `4Δ_g/ε`
    Privacy,
}

/// Outcome of checking `σ > max(2|g|/3, 4Δ_g/ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpReport {
    pub sigma: f64,
    pub magnitude_term: f64,
    pub privacy_term: f64,
}

impl DpReport {
    /// The value σ must strictly exceed.
    pub fn bound(&self) -> f64 {
        self.magnitude_term.max(self.privacy_term)
    }

    pub fn is_ok(&self) -> bool {
        self.failing().is_empty()
    }

    pub fn failing(&self) -> Vec<DpTerm> {
        let mut out = Vec::new();
        if self.sigma.partial_cmp(&self.magnitude_term) != Some(std::cmp::Ordering::Greater) {
            out.push(DpTerm::Magnitude);
        }
        if self.sigma.partial_cmp(&self.privacy_term) != Some(std::cmp::Ordering::Greater) {
            out.push(DpTerm::Privacy);
        }
        out
    }
}

impl fmt::Display for DpReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "sigma {} exceeds the noise bound {}", self.sigma, self.bound());
        }
        let names: Vec<&str> = self
            .failing()
            .iter()
            .map(|t| match t {
                DpTerm::Magnitude => "2|g|/3",
                DpTerm::Privacy => "4*sensitivity/epsilon",
            })
            .collect();
        write!(
            f,
            "sigma {} violates the noise bound: not above {} (2|g|/3 = {}, 4*sensitivity/epsilon = {}); sigma must exceed {}",
            self.sigma,
            names.join(" and "),
            self.magnitude_term,
            self.privacy_term,
            self.bound()
        )
    }
}

/// Checks the Sign-Gaussian noise bound. The harness passes the clip bound as
/// `max_abs_g`, the worst case after clipping.
pub fn validate_dp(params: &RainParams, max_abs_g: f64) -> DpReport {
    DpReport {
        sigma: params.sigma,
        magnitude_term: 2.0 * max_abs_g.abs() / 3.0,
        privacy_term: 4.0 * params.sensitivity / params.epsilon,
    }
}

/// A client's randomized update. Bit `b` encodes sign `2b - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignUpdate {
    pub bits: Vec<bool>,
    /// Harness bookkeeping only; never leaves the client.
    #[serde(skip)]
    pub client_hint: Option<usize>,
}

impl SignUpdate {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        SignUpdate {
            bits,
            client_hint: None,
        }
    }

    /// Sign vector to bits with `sign(0) = +1`.
    pub fn from_signs(signs: &[f64]) -> Self {
        SignUpdate::from_bits(signs.iter().map(|&s| s >= 0.0).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn signs(&self) -> Vec<i8> {
        self.bits.iter().map(|&b| if b { 1 } else { -1 }).collect()
    }

    pub fn signs_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    pub fn to_ring(&self) -> Vec<RingElement> {
        self.bits
            .iter()
            .map(|&b| if b { RingElement::ONE } else { RingElement::ZERO })
            .collect()
    }
}

/// Coordinate-wise clamp to `[-C, C]`.
pub fn clip(g: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("clip bound must be > 0, got {c}")));
    }
    g.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x.is_finite() {
                Ok(x.clamp(-c, c))
            } else {
                Err(Error::NonFinite(i))
            }
        })
        .collect()
}

/// Adds `N(0, σ²)` noise per coordinate and keeps only the sign. A zero sum
/// counts as positive.
pub fn sign_gaussian<R: Rng + ?Sized>(g: &[f64], sigma: f64, rng: &mut R) -> SignUpdate {
    let bits = g
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x + sigma * z >= 0.0
        })
        .collect();
    SignUpdate::from_bits(bits)
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that noise flips the sign of `g_j`: `Φ(-|g_j|/σ)`.
pub fn flip_probability(g_j: f64, sigma: f64) -> f64 {
    phi(-g_j.abs() / sigma)
}

/// Expected sign shrink factor `2Φ(|g_j|/σ) - 1`.
pub fn attenuation(g_j: f64, sigma: f64) -> f64 {
    2.0 * phi(g_j.abs() / sigma) - 1.0
}

pub fn encode_and_split<R: Rng + ?Sized>(
    m: Modulus,
    u: &SignUpdate,
    rng: &mut R,
) -> Result<(ShareVector, ShareVector)> {
    split(m, &u.to_ring(), rng)
}

pub fn encode_and_split_with(
    m: Modulus,
    u: &SignUpdate,
    share0: Vec<RingElement>,
) -> Result<(ShareVector, ShareVector)> {
    split_with_mask(m, &u.to_ring(), share0)
}
