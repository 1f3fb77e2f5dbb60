//! Prime-ring arithmetic, additive secret sharing and the offline dealer.
//!
//! Every protocol value lives in `Z_p` for an odd prime `p`. Signed
//! quantities use the centered lift: residues above `(p-1)/2` read as
//! negative numbers.

mod beaver;
mod dealer;
mod permutation;
mod prg;
mod share;

pub use beaver::{mul_shares, BeaverTriple, MulOutput, TripleStore};
pub(crate) use dealer::WordReader;
pub use dealer::{dealer_setup, triples_per_round, DealerBundle};
pub use permutation::Permutation;
pub use prg::{Prg, Seed};
pub use share::{reconstruct, split, split_with_mask, Party, ShareVector, SharedVector};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The Mersenne prime `2^61 - 1`, the default protocol modulus.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Wire width of one ring element in every serialized format.
pub const ELEMENT_BYTES: usize = 8;

/// A residue in `[0, p)`. The modulus is carried by [`Modulus`], which is the
/// only way to build one from an arbitrary integer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RingElement(u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);
    pub const ONE: RingElement = RingElement(1);

    pub fn value(self) -> u64 {
        self.0
    }

    /// Wraps a word without reduction, for decoding untrusted input that is
    /// validated later.
    pub(crate) fn from_raw(v: u64) -> Self {
        RingElement(v)
    }
}

/// A validated odd prime modulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

impl TryFrom<u64> for Modulus {
    type Error = Error;

    fn try_from(p: u64) -> Result<Self> {
        Modulus::new(p)
    }
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.0
    }
}

impl Default for Modulus {
    fn default() -> Self {
        Modulus(MERSENNE_61)
    }
}

impl Modulus {
    pub fn new(p: u64) -> Result<Self> {
        if p < 3 || p.is_multiple_of(2) || p >= 1 << 63 || !is_prime(p) {
            return Err(Error::InvalidModulus(p));
        }
        Ok(Modulus(p))
    }

    pub fn mersenne61() -> Self {
        Modulus(MERSENNE_61)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// `(p - 1) / 2`, the largest magnitude representable under the centered lift.
    pub fn half(self) -> u64 {
        (self.0 - 1) / 2
    }

    /// Checked construction: `v` must already be reduced.
    pub fn elem(self, v: u64) -> Result<RingElement> {
        if v >= self.0 {
            return Err(Error::OutOfRange {
                value: v,
                modulus: self.0,
            });
        }
        Ok(RingElement(v))
    }

    pub fn reduce(self, v: u64) -> RingElement {
        RingElement(v % self.0)
    }

    pub fn contains(self, a: RingElement) -> bool {
        a.0 < self.0
    }

    pub fn add(self, a: RingElement, b: RingElement) -> RingElement {
        let s = a.0 + b.0;
        RingElement(if s >= self.0 { s - self.0 } else { s })
    }

    pub fn sub(self, a: RingElement, b: RingElement) -> RingElement {
        if a.0 >= b.0 {
            RingElement(a.0 - b.0)
        } else {
            RingElement(a.0 + self.0 - b.0)
        }
    }

    pub fn neg(self, a: RingElement) -> RingElement {
        if a.0 == 0 {
            a
        } else {
            RingElement(self.0 - a.0)
        }
    }

    pub fn mul(self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(((a.0 as u128 * b.0 as u128) % self.0 as u128) as u64)
    }

    /// Multiplies by a small public constant.
    pub fn scale(self, a: RingElement, c: i64) -> RingElement {
        self.mul(a, self.encode(c))
    }

    /// Maps a signed integer into the ring (`x mod p`, always non-negative).
    pub fn encode(self, x: i64) -> RingElement {
        RingElement((x as i128).rem_euclid(self.0 as i128) as u64)
    }

    /// Inverse of [`Modulus::encode`] on `[-(p-1)/2, (p-1)/2]`.
    pub fn centered_lift(self, a: RingElement) -> i64 {
        if a.0 > self.half() {
            -((self.0 - a.0) as i64)
        } else {
            a.0 as i64
        }
    }

    pub fn random<R: Rng + ?Sized>(self, rng: &mut R) -> RingElement {
        RingElement(rng.random_range(0..self.0))
    }

    pub fn random_vec<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<RingElement> {
        (0..n).map(|_| self.random(rng)).collect()
    }

    pub fn add_vec(self, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        check_len(a.len(), b.len())?;
        Ok(a.iter().zip(b).map(|(&x, &y)| self.add(x, y)).collect())
    }

    pub fn sub_vec(self, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
        check_len(a.len(), b.len())?;
        Ok(a.iter().zip(b).map(|(&x, &y)| self.sub(x, y)).collect())
    }

    /// Inner product `sum_j a[j] * b[j] mod p`.
    pub fn dot(self, a: &[RingElement], b: &[RingElement]) -> Result<RingElement> {
        check_len(a.len(), b.len())?;
        let p = self.0 as u128;
        let acc = a
            .iter()
            .zip(b)
            .fold(0u128, |acc, (x, y)| (acc + x.0 as u128 * y.0 as u128) % p);
        Ok(RingElement(acc as u64))
    }

    /// Rejects any element that is not reduced modulo `p`.
    pub fn check_all(self, v: &[RingElement]) -> Result<()> {
        match v.iter().find(|a| a.0 >= self.0) {
            Some(a) => Err(Error::OutOfRange {
                value: a.0,
                modulus: self.0,
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin; the witness set is exact for all 64-bit inputs.
fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &w in &WITNESSES {
        if n.is_multiple_of(w) {
            return n == w;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}
