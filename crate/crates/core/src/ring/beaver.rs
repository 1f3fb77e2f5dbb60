use super::{check_len, reconstruct, Modulus, Party, RingElement, ShareVector, SharedVector};
use crate::error::{Error, Result};

/// Shares of `n` independent scalar triples `(x, y, z = x*y)`.
///
/// Not `Clone`: a triple is spent by moving it into [`mul_shares`].
#[derive(Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub x: SharedVector,
    pub y: SharedVector,
    pub z: SharedVector,
}

impl BeaverTriple {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of an elementwise Beaver multiplication, including the two opened
/// difference vectors `e = a - x` and `f = b - y`.
#[derive(Debug, Clone)]
pub struct MulOutput {
    pub product: SharedVector,
    pub e: Vec<RingElement>,
    pub f: Vec<RingElement>,
}

/// Elementwise product of two shared vectors.
///
/// Each party subtracts its triple shares locally, both difference vectors
/// are opened, and party `t` finishes with
/// `<ab>_t = -t*e*f + f*<a>_t + e*<b>_t + <z>_t`.
pub fn mul_shares(m: Modulus, a: &SharedVector, b: &SharedVector, triple: BeaverTriple) -> Result<MulOutput> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), triple.len())?;

    let mut e_shares = Vec::with_capacity(2);
    let mut f_shares = Vec::with_capacity(2);
    for party in Party::BOTH {
        let t = party.index();
        e_shares.push(ShareVector::new(
            party,
            m.sub_vec(&a.shares[t].elems, &triple.x.shares[t].elems)?,
        ));
        f_shares.push(ShareVector::new(
            party,
            m.sub_vec(&b.shares[t].elems, &triple.y.shares[t].elems)?,
        ));
    }
    let e = reconstruct(m, &e_shares[0], &e_shares[1])?;
    let f = reconstruct(m, &f_shares[0], &f_shares[1])?;

    let finish = |party: Party| -> ShareVector {
        let t = party.index();
        let elems = (0..a.len())
            .map(|j| {
                let mut acc = m.add(m.mul(f[j], a.shares[t].elems[j]), m.mul(e[j], b.shares[t].elems[j]));
                acc = m.add(acc, triple.z.shares[t].elems[j]);
                if party == Party::P1 {
                    acc = m.sub(acc, m.mul(e[j], f[j]));
                }
                acc
            })
            .collect();
        ShareVector::new(party, elems)
    };
    let product = SharedVector {
        shares: [finish(Party::P0), finish(Party::P1)],
    };
    Ok(MulOutput { product, e, f })
}

/// A one-time pool of scalar triples, handed out front to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleStore {
    // [x0, x1, y0, y1, z0, z1]
    pub(crate) columns: [Vec<RingElement>; 6],
    cursor: usize,
}

impl TripleStore {
    pub(crate) fn from_columns(columns: [Vec<RingElement>; 6]) -> Result<Self> {
        let n = columns[0].len();
        for c in &columns {
            check_len(n, c.len())?;
        }
        Ok(TripleStore { columns, cursor: 0 })
    }

    /// Generates `n` fresh triples from `rng`. Used by the dealer and by tests
    /// that need triples without a full bundle.
    pub fn generate<R: rand::Rng + ?Sized>(m: Modulus, n: usize, rng: &mut R) -> Self {
        let mut columns: [Vec<RingElement>; 6] = Default::default();
        for c in columns.iter_mut() {
            c.reserve(n);
        }
        for _ in 0..n {
            let x = m.random(rng);
            let y = m.random(rng);
            let z = m.mul(x, y);
            for (k, v) in [x, y, z].into_iter().enumerate() {
                let s0 = m.random(rng);
                columns[2 * k].push(s0);
                columns[2 * k + 1].push(m.sub(v, s0));
            }
        }
        TripleStore { columns, cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.columns[0].len()
    }

    pub fn remaining(&self) -> usize {
        self.capacity() - self.cursor
    }

    pub fn take(&mut self, n: usize) -> Result<BeaverTriple> {
        if n > self.remaining() {
            return Err(Error::TriplesExhausted {
                requested: n,
                remaining: self.remaining(),
            });
        }
        let range = self.cursor..self.cursor + n;
        self.cursor += n;
        let pair = |k: usize| SharedVector {
            shares: [
                ShareVector::new(Party::P0, self.columns[2 * k][range.clone()].to_vec()),
                ShareVector::new(Party::P1, self.columns[2 * k + 1][range.clone()].to_vec()),
            ],
        };
        Ok(BeaverTriple {
            x: pair(0),
            y: pair(1),
            z: pair(2),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::split_with_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn shared(m: Modulus, v: u64, mask: u64) -> SharedVector {
        let (s0, s1) = split_with_mask(m, &[m.elem(v).unwrap()], vec![m.elem(mask).unwrap()]).unwrap();
        SharedVector::from_pair(s0, s1).unwrap()
    }

    #[test]
    fn worked_example_mod_97() {
        // a=3, b=4, triple (x=1, y=2, z=2): e=2, f=2, product 12.
        let m = Modulus::new(97).unwrap();
        let triple = BeaverTriple {
            x: shared(m, 1, 40),
            y: shared(m, 2, 11),
            z: shared(m, 2, 90),
        };
        let out = mul_shares(m, &shared(m, 3, 17), &shared(m, 4, 60), triple).unwrap();
        assert_eq!(out.e[0].value(), 2);
        assert_eq!(out.f[0].value(), 2);
        assert_eq!(out.product.reconstruct(m).unwrap()[0].value(), 12);
    }

    #[test]
    fn exhaustive_mod_7() {
        let m = Modulus::new(7).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for a in 0..7 {
            for b in 0..7 {
                let mut store = TripleStore::generate(m, 1, &mut rng);
                let out = mul_shares(m, &shared(m, a, 3), &shared(m, b, 6), store.take(1).unwrap()).unwrap();
                assert_eq!(out.product.reconstruct(m).unwrap()[0].value(), a * b % 7);
            }
        }
    }

    #[test]
    fn random_products_mersenne() {
        let m = Modulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut store = TripleStore::generate(m, 500, &mut rng);
        for _ in 0..500 {
            let (a, b) = (m.random(&mut rng), m.random(&mut rng));
            let (mask_a, mask_b) = (m.random(&mut rng).value(), m.random(&mut rng).value());
            let out = mul_shares(
                m,
                &shared(m, a.value(), mask_a),
                &shared(m, b.value(), mask_b),
                store.take(1).unwrap(),
            )
            .unwrap();
            assert_eq!(out.product.reconstruct(m).unwrap()[0], m.mul(a, b));
        }
        assert_eq!(store.remaining(), 0);
    }

    #[test]
    fn zero_annihilates() {
        let m = Modulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut store = TripleStore::generate(m, 1, &mut rng);
        let out = mul_shares(m, &shared(m, 0, 12345), &shared(m, 987654, 5), store.take(1).unwrap()).unwrap();
        assert_eq!(out.product.reconstruct(m).unwrap()[0], RingElement::ZERO);
    }

    #[test]
    fn store_refuses_overdraw() {
        let m = Modulus::new(97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut store = TripleStore::generate(m, 3, &mut rng);
        store.take(2).unwrap();
        assert_eq!(
            store.take(2).unwrap_err(),
            Error::TriplesExhausted {
                requested: 2,
                remaining: 1
            }
        );
    }
}
