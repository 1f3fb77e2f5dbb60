use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, Modulus, RingElement};
use crate::error::{Error, Result};

/// One of the two non-colluding servers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    P0,
    P1,
}

impl Party {
    pub const BOTH: [Party; 2] = [Party::P0, Party::P1];

    pub fn index(self) -> usize {
        match self {
            Party::P0 => 0,
            Party::P1 => 1,
        }
    }

    pub fn other(self) -> Party {
        match self {
            Party::P0 => Party::P1,
            Party::P1 => Party::P0,
        }
    }

    pub fn from_index(i: usize) -> Result<Party> {
        match i {
            0 => Ok(Party::P0),
            1 => Ok(Party::P1),
            _ => Err(Error::InvalidParameter(format!("party index {i}"))),
        }
    }
}

/// One party's additive share of a length-`d` vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareVector {
    pub party: Party,
    pub elems: Vec<RingElement>,
}

impl ShareVector {
    pub fn new(party: Party, elems: Vec<RingElement>) -> Self {
        ShareVector { party, elems }
    }

    pub fn zeros(party: Party, len: usize) -> Self {
        ShareVector {
            party,
            elems: vec![RingElement::ZERO; len],
        }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn negated(&self, m: Modulus) -> ShareVector {
        ShareVector {
            party: self.party,
            elems: self.elems.iter().map(|&a| m.neg(a)).collect(),
        }
    }

    pub fn with_party(mut self, party: Party) -> ShareVector {
        self.party = party;
        self
    }
}

/// Both parties' shares of one vector, as held by the in-process simulation.
///
/// Protocol code touches `shares[t]` only from party `t`'s side; the pair is
/// opened exclusively through Beaver openings and declared gates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedVector {
    pub shares: [ShareVector; 2],
}

impl SharedVector {
    pub fn from_pair(s0: ShareVector, s1: ShareVector) -> Result<Self> {
        if s0.party != Party::P0 || s1.party != Party::P1 {
            return Err(Error::WrongParty {
                expected: 0,
                actual: s0.party.index(),
            });
        }
        check_len(s0.len(), s1.len())?;
        Ok(SharedVector { shares: [s0, s1] })
    }

    /// Shares of a public vector: party 0 holds the value, party 1 holds zero.
    pub fn public(values: Vec<RingElement>) -> Self {
        let len = values.len();
        SharedVector {
            shares: [ShareVector::new(Party::P0, values), ShareVector::zeros(Party::P1, len)],
        }
    }

    pub fn len(&self) -> usize {
        self.shares[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn share(&self, party: Party) -> &ShareVector {
        &self.shares[party.index()]
    }

    pub fn reconstruct(&self, m: Modulus) -> Result<Vec<RingElement>> {
        reconstruct(m, &self.shares[0], &self.shares[1])
    }
}

/// Splits `secret` into two additive shares with a uniformly random share 0.
pub fn split<R: Rng + ?Sized>(m: Modulus, secret: &[RingElement], rng: &mut R) -> Result<(ShareVector, ShareVector)> {
    m.check_all(secret)?;
    let mask = m.random_vec(secret.len(), rng);
    split_with_mask(m, secret, mask)
}

/// Splits `secret` using a caller-chosen share 0.
pub fn split_with_mask(
    m: Modulus,
    secret: &[RingElement],
    share0: Vec<RingElement>,
) -> Result<(ShareVector, ShareVector)> {
    m.check_all(secret)?;
    m.check_all(&share0)?;
    let share1 = m.sub_vec(secret, &share0)?;
    Ok((ShareVector::new(Party::P0, share0), ShareVector::new(Party::P1, share1)))
}

pub fn reconstruct(m: Modulus, s0: &ShareVector, s1: &ShareVector) -> Result<Vec<RingElement>> {
    check_len(s0.len(), s1.len())?;
    if s0.party == s1.party {
        return Err(Error::SameParty);
    }
    m.add_vec(&s0.elems, &s1.elems)
}
