use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bijection on `0..n`, applied as `out[i] = input[self[i]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Permutation(v)
    }

    pub fn from_vec(v: Vec<usize>) -> Result<Self> {
        let p = Permutation(v);
        if !p.is_bijection() {
            return Err(Error::InvalidParameter("not a permutation".into()));
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Source index that lands in slot `i`.
    pub fn source(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn is_bijection(&self) -> bool {
        let mut sorted = self.0.clone();
        sorted.sort_unstable();
        sorted.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: items.len(),
            });
        }
        Ok(self.0.iter().map(|&s| items[s].clone()).collect())
    }

    /// The single permutation equal to applying `self` and then `next`.
    pub fn then(&self, next: &Permutation) -> Permutation {
        Permutation(next.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s] = i;
        }
        Permutation(inv)
    }
}
