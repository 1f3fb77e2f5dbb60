//! Streaming Carter-Wegman MAC over re-masked shares.
//!
//! A round key `k_t` in `Z_p^d` is derived from the shared seed and the round
//! index, so keys never repeat across rounds and a stale tag cannot verify in
//! a later round. The tag of a vector `r` is `<k_t, r> mod p`; an additive
//! perturbation `delta` survives verification only if `<k_t, delta> = 0`,
//! which for a uniform key happens with probability `1/p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::{check_len, Modulus, Party, Prg, RingElement, Seed, ShareVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityPolicy {
    /// The first rejected share aborts the round.
    #[default]
    Halt,
    /// Rejected shares are excluded and counted.
    Drop,
}

/// Round key and its additive split between the two parties.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacKey {
    pub round: u64,
    pub key: Vec<RingElement>,
    pub shares: [Vec<RingElement>; 2],
}

impl MacKey {
    /// The full key as recombined inside the verification gate.
    pub fn combined(&self, m: Modulus) -> Result<Vec<RingElement>> {
        m.add_vec(&self.shares[0], &self.shares[1])
    }
}

pub fn derive_round_key(m: Modulus, seed: &Seed, round: u64, d: usize) -> MacKey {
    let key = m.random_vec(d, &mut Prg::stream(seed, round, "mac-key"));
    let share0 = m.random_vec(d, &mut Prg::stream(seed, round, "mac-key-share"));
    let share1 = m.sub_vec(&key, &share0).expect("equal lengths");
    MacKey {
        round,
        key,
        shares: [share0, share1],
    }
}

/// Per-round key used by clients to tag their uploads.
pub fn derive_upload_key(m: Modulus, seed: &Seed, round: u64, d: usize) -> Vec<RingElement> {
    m.random_vec(d, &mut Prg::stream(seed, round, "upload-key"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedShare {
    pub share: ShareVector,
    pub tag: RingElement,
}

/// One party's outgoing stream of re-masked shares for one round, in slot order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedBatch {
    pub round: u64,
    pub party: Party,
    pub items: Vec<TaggedShare>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

pub fn mac_tag(m: Modulus, share: &[RingElement], key: &[RingElement]) -> Result<RingElement> {
    check_len(key.len(), share.len())?;
    m.dot(key, share)
}

pub fn tag_share(m: Modulus, share: ShareVector, key: &[RingElement]) -> Result<TaggedShare> {
    let tag = mac_tag(m, &share.elems, key)?;
    Ok(TaggedShare { share, tag })
}

/// Recomputes the tag under `key` and compares. Malformed input (wrong length
/// or unreduced elements) is a rejection, never an error.
pub fn mac_verify(m: Modulus, tagged: &TaggedShare, key: &[RingElement]) -> Verdict {
    if m.check_all(&tagged.share.elems).is_err() || !m.contains(tagged.tag) {
        return Verdict::Reject;
    }
    match mac_tag(m, &tagged.share.elems, key) {
        Ok(t) if t == tagged.tag => Verdict::Accept,
        _ => Verdict::Reject,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortAction {
    /// Tag rejected under the halt policy; the round was aborted.
    Halted,
    /// Tag rejected under the drop policy; the slot was excluded.
    Dropped,
    /// Batch size differs from the expected slot count.
    Cardinality,
}

/// Integrity event as written to the metrics stream. Names the batch
/// position only, never a client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortReport {
    pub round: u64,
    pub party: usize,
    pub batch_index: usize,
    pub policy: IntegrityPolicy,
    pub action: AbortAction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamOutcome {
    /// Accepted shares with their batch position.
    pub verified: Vec<(usize, ShareVector)>,
    pub rejected: Vec<usize>,
    pub abort: Option<AbortReport>,
}

impl StreamOutcome {
    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }
}

/// Verifies a batch in order. Under [`IntegrityPolicy::Halt`] the first
/// rejection stops processing; under [`IntegrityPolicy::Drop`] rejected
/// shares are skipped and the rest flow through unchanged.
pub fn stream_check(m: Modulus, batch: &TaggedBatch, key: &MacKey, policy: IntegrityPolicy) -> Result<StreamOutcome> {
    if batch.round != key.round {
        return Err(Error::KeyRoundMismatch {
            key_round: key.round,
            batch_round: batch.round,
        });
    }
    let full_key = key.combined(m)?;
    let mut out = StreamOutcome {
        verified: Vec::with_capacity(batch.items.len()),
        rejected: Vec::new(),
        abort: None,
    };
    for (idx, item) in batch.items.iter().enumerate() {
        match mac_verify(m, item, &full_key) {
            Verdict::Accept => out.verified.push((idx, item.share.clone())),
            Verdict::Reject => {
                out.rejected.push(idx);
                if policy == IntegrityPolicy::Halt {
                    out.abort = Some(AbortReport {
                        round: batch.round,
                        party: batch.party.index(),
                        batch_index: idx,
                        policy,
                        action: AbortAction::Halted,
                    });
                    out.verified.clear();
                    return Ok(out);
                }
            }
        }
    }
    Ok(out)
}

/// Exactly-once check: the batch must carry one share per slot. A mismatch
/// cannot be repaired by dropping, so it aborts under either policy.
pub fn check_cardinality(batch: &TaggedBatch, expected: usize, policy: IntegrityPolicy) -> Option<AbortReport> {
    (batch.items.len() != expected).then(|| AbortReport {
        round: batch.round,
        party: batch.party.index(),
        batch_index: batch.items.len().min(expected),
        policy,
        action: AbortAction::Cardinality,
    })
}
