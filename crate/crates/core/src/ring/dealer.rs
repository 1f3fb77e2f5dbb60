//! Offline correlated randomness.
//!
//! Both servers hold the same seed and expand it locally, so the "dealer" is
//! a pure function of `(seed, K, d, round)`.
//!
//! # Byte layout
//!
//! All integers are little-endian `u64`.
//!
//! ```text
//! magic    "RAINBNDL"            8 bytes
//! version  1
//! p, K, d, round
//! seed                           32 bytes
//! 15 sections, each: count, then count x u64
//!   perm0, perm1, perm           (K entries, 0-based)
//!   mask_r0, mask_r1             (K*d ring elements, row-major by slot)
//!   triple x0, x1, y0, y1, z0, z1
//!   mac_key, mac_key_share0, mac_key_share1
//!   upload_key
//! ```

use super::{Modulus, Permutation, Prg, RingElement, Seed, TripleStore};
use crate::error::{Error, Result};
use crate::mac::{derive_round_key, derive_upload_key, MacKey};

const MAGIC: &[u8; 8] = b"RAINBNDL";
const VERSION: u64 = 1;

/// Scalar multiplications consumed by one aggregation round: one per
/// coordinate for the XOR, one per client for the ReLU and one per
/// coordinate for the weighted sum.
pub fn triples_per_round(k: usize, d: usize) -> usize {
    2 * k * d + k
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DealerBundle {
    pub modulus: Modulus,
    pub seed: Seed,
    pub round: u64,
    pub k: usize,
    pub d: usize,
    pub perm0: Permutation,
    pub perm1: Permutation,
    /// Effective joint permutation `perm1 . perm0`, applied by both parties.
    pub permutation: Permutation,
    /// Re-masking pads, `masks[t][i]` for party `t` and slot `i`; the two
    /// parties' pads sum to zero elementwise.
    pub masks: [Vec<Vec<RingElement>>; 2],
    pub triples: TripleStore,
    pub mac_key: MacKey,
    /// Key clients use to tag their uploads.
    pub upload_key: Vec<RingElement>,
}

pub fn dealer_setup(m: Modulus, seed: &Seed, k: usize, d: usize, round: u64) -> Result<DealerBundle> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "dealer needs K >= 1 and d >= 1, got K={k}, d={d}"
        )));
    }
    let perm0 = Permutation::random(k, &mut Prg::stream(seed, round, "perm0"));
    let perm1 = Permutation::random(k, &mut Prg::stream(seed, round, "perm1"));
    let permutation = perm0.then(&perm1);

    let mut mask_rng = Prg::stream(seed, round, "masks");
    let r0: Vec<Vec<RingElement>> = (0..k).map(|_| m.random_vec(d, &mut mask_rng)).collect();
    let r1 = r0.iter().map(|row| row.iter().map(|&x| m.neg(x)).collect()).collect();

    let triples = TripleStore::generate(m, triples_per_round(k, d), &mut Prg::stream(seed, round, "triples"));

    Ok(DealerBundle {
        modulus: m,
        seed: *seed,
        round,
        k,
        d,
        perm0,
        perm1,
        permutation,
        masks: [r0, r1],
        triples,
        mac_key: derive_round_key(m, seed, round, d),
        upload_key: derive_upload_key(m, seed, round, d),
    })
}

impl DealerBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.modulus.value(), self.k as u64, self.d as u64, self.round] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.seed.as_bytes());

        let perm_section = |p: &Permutation| p.as_slice().iter().map(|&i| i as u64).collect::<Vec<_>>();
        let ring_section = |v: &[RingElement]| v.iter().map(|e| e.value()).collect::<Vec<_>>();
        let flat = |rows: &[Vec<RingElement>]| rows.iter().flatten().map(|e| e.value()).collect::<Vec<_>>();

        let mut sections = vec![
            perm_section(&self.perm0),
            perm_section(&self.perm1),
            perm_section(&self.permutation),
            flat(&self.masks[0]),
            flat(&self.masks[1]),
        ];
        sections.extend(self.triples.columns.iter().map(|c| ring_section(c)));
        sections.push(ring_section(&self.mac_key.key));
        sections.push(ring_section(&self.mac_key.shares[0]));
        sections.push(ring_section(&self.mac_key.shares[1]));
        sections.push(ring_section(&self.upload_key));

        for s in sections {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = WordReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Malformed("bad bundle magic".into()));
        }
        let version = r.word()?;
        if version != VERSION {
            return Err(Error::Malformed(format!("unsupported bundle version {version}")));
        }
        let m = Modulus::new(r.word()?)?;
        let k = r.word()? as usize;
        let d = r.word()? as usize;
        let round = r.word()?;
        let seed = Seed(r.take(32)?.try_into().expect("32 bytes"));

        let mut sections = Vec::with_capacity(15);
        for _ in 0..15 {
            let n = r.word()? as usize;
            let mut s = Vec::with_capacity(n.min(bytes.len() / 8));
            for _ in 0..n {
                s.push(r.word()?);
            }
            sections.push(s);
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed("trailing bytes after bundle".into()));
        }

        let perm = |s: &[u64]| -> Result<Permutation> {
            if s.len() != k {
                return Err(Error::Malformed("permutation length".into()));
            }
            Permutation::from_vec(s.iter().map(|&v| v as usize).collect())
        };
        let ring = |s: &[u64]| -> Result<Vec<RingElement>> { s.iter().map(|&v| m.elem(v)).collect() };
        let rows = |s: &[u64]| -> Result<Vec<Vec<RingElement>>> {
            if s.len() != k * d {
                return Err(Error::Malformed("mask length".into()));
            }
            s.chunks(d.max(1)).map(ring).collect()
        };

        let columns: [Vec<RingElement>; 6] = [
            ring(&sections[5])?,
            ring(&sections[6])?,
            ring(&sections[7])?,
            ring(&sections[8])?,
            ring(&sections[9])?,
            ring(&sections[10])?,
        ];
        Ok(DealerBundle {
            modulus: m,
            seed,
            round,
            k,
            d,
            perm0: perm(&sections[0])?,
            perm1: perm(&sections[1])?,
            permutation: perm(&sections[2])?,
            masks: [rows(&sections[3])?, rows(&sections[4])?],
            triples: TripleStore::from_columns(columns)?,
            mac_key: MacKey {
                round,
                key: ring(&sections[11])?,
                shares: [ring(&sections[12])?, ring(&sections[13])?],
            },
            upload_key: ring(&sections[14])?,
        })
    }
}

pub(crate) struct WordReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> WordReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Malformed(format!(
                "unexpected end of input at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn word(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
