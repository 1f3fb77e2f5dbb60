//! Client-side poisoning attacks and server-side transcript tampering.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac::{TaggedBatch, TaggedShare};
use crate::ring::{Modulus, Prg, RingElement, Seed};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    KrumAttack,
    TrimAttack,
    Scaling,
    DpflAdaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default)]
    pub kind: AttackKind,
    /// Fraction of clients that are malicious; `floor(rho * K)` are chosen.
    #[serde(default)]
    pub malicious_fraction: f64,
    /// Share of a scaling attacker's local examples carrying the trigger.
    #[serde(default = "default_trigger_fraction")]
    pub trigger_fraction: f64,
    /// Amplification factor of the scaling attack.
    #[serde(default = "default_amplification")]
    pub amplification: f64,
    /// Backdoor target label.
    #[serde(default)]
    pub target_label: usize,
}

fn default_trigger_fraction() -> f64 {
    0.5
}

fn default_amplification() -> f64 {
    100.0
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            malicious_fraction: 0.0,
            trigger_fraction: default_trigger_fraction(),
            amplification: default_amplification(),
            target_label: 0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err(Error::InvalidParameter(format!(
                "malicious_fraction must be in [0, 1], got {}",
                self.malicious_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.trigger_fraction) {
            return Err(Error::InvalidParameter(format!(
                "trigger_fraction must be in [0, 1], got {}",
                self.trigger_fraction
            )));
        }
        if !(self.amplification.is_finite() && self.amplification > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "amplification must be > 0, got {}",
                self.amplification
            )));
        }
        if self.target_label >= classes {
            return Err(Error::InvalidParameter(format!(
                "target_label {} out of range for {classes} classes",
                self.target_label
            )));
        }
        Ok(())
    }

    pub fn malicious_count(&self, k: usize) -> usize {
        if self.kind == AttackKind::None {
            return 0;
        }
        // tolerate representation error such as 0.3 * 50 = 14.999...
        ((self.malicious_fraction * k as f64) + 1e-9).floor() as usize
    }
}

/// Sorted indices of the malicious clients, chosen by seed.
pub fn select_malicious(spec: &AttackSpec, k: usize, seed: &Seed) -> Vec<usize> {
    let n = spec.malicious_count(k).min(k);
    let mut idx = sample(&mut Prg::stream(seed, 0, "malicious"), k, n).into_vec();
    idx.sort_unstable();
    idx
}

/// `l -> M - l - 1`.
pub fn label_flip(labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l < classes {
                Ok(classes - l - 1)
            } else {
                Err(Error::InvalidParameter(format!(
                    "label {l} out of range for {classes} classes"
                )))
            }
        })
        .collect()
}

pub fn scaling_attack(update: &[f64], amplification: f64) -> Vec<f64> {
    update.iter().map(|x| x * amplification).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales the poisoned gradient to the norm of a noisy benign template:
/// `A * G_u` with `A = ||template + N(0, sigma^2)|| / ||G_u||`.
pub fn dpfl_adaptive<R: Rng + ?Sized>(
    poison: &[f64],
    benign_template: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    crate::ring::check_len(poison.len(), benign_template.len())?;
    let g = norm(poison);
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter("poison gradient has zero norm".into()));
    }
    let noisy: Vec<f64> = benign_template
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x + sigma * z
        })
        .collect();
    let a = norm(&noisy) / g;
    Ok(poison.iter().map(|x| a * x).collect())
}

const KRUM_GAMMAS: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];

fn mean_of(updates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = updates.first().map(Vec::len).ok_or(Error::Empty("no benign updates"))?;
    for u in updates {
        crate::ring::check_len(d, u.len())?;
    }
    let n = updates.len() as f64;
    Ok((0..d).map(|j| updates.iter().map(|u| u[j]).sum::<f64>() / n).collect())
}

/// Common malicious vector `-gamma * mean(benign)` with the largest grid
/// `gamma` whose norm stays within ten times the mean benign norm.
pub fn krum_attack(benign: &[Vec<f64>], n_malicious: usize) -> Result<Vec<Vec<f64>>> {
    let mean = mean_of(benign)?;
    let cap = 10.0 * benign.iter().map(|u| norm(u)).sum::<f64>() / benign.len() as f64;
    let mnorm = norm(&mean);
    let gamma = KRUM_GAMMAS
        .iter()
        .rev()
        .copied()
        .find(|g| g * mnorm <= cap)
        .unwrap_or(KRUM_GAMMAS[0]);
    let u: Vec<f64> = mean.iter().map(|x| -gamma * x).collect();
    Ok(vec![u; n_malicious])
}

/// Per coordinate, the benign extreme opposite the benign mean's sign: the
/// minimum where the mean is non-negative, the maximum otherwise.
pub fn trim_attack(benign: &[Vec<f64>], n_malicious: usize) -> Result<Vec<Vec<f64>>> {
    let mean = mean_of(benign)?;
    let u: Vec<f64> = (0..mean.len())
        .map(|j| {
            let col = benign.iter().map(|b| b[j]);
            if mean[j] >= 0.0 {
                col.fold(f64::INFINITY, f64::min)
            } else {
                col.fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    Ok(vec![u; n_malicious])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperTarget {
    /// Adds `delta` to one coordinate of a shuffled share.
    ShuffledShare,
    /// Adds `delta` to a share's tag.
    Tag,
    /// Removes the share.
    Drop,
    /// Sends the share a second time, right after the original.
    Replay,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerTamperSpec {
    pub target: TamperTarget,
    /// Sending party whose outgoing batch is modified.
    #[serde(default)]
    pub party: usize,
    /// Batch index of the affected share.
    pub position: usize,
    #[serde(default)]
    pub coordinate: usize,
    #[serde(default = "default_delta")]
    pub delta: u64,
}

fn default_delta() -> u64 {
    1
}

/// Ground truth for detection scoring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperRecord {
    pub round: u64,
    pub party: usize,
    pub position: usize,
    pub target: TamperTarget,
    /// Whether the batch content actually differs from what was sent.
    pub effective: bool,
}

/// Applies one tamper to a party's outgoing batch in place.
pub fn server_tamper(m: Modulus, batch: &mut TaggedBatch, spec: &ServerTamperSpec) -> Result<TamperRecord> {
    let len = batch.items.len();
    if spec.position >= len {
        return Err(Error::InvalidPosition {
            position: spec.position,
            len,
        });
    }
    let delta = m.reduce(spec.delta);
    let effective = match spec.target {
        TamperTarget::ShuffledShare => {
            let item = &mut batch.items[spec.position];
            let n = item.share.elems.len();
            if spec.coordinate >= n {
                return Err(Error::InvalidPosition {
                    position: spec.coordinate,
                    len: n,
                });
            }
            let e = &mut item.share.elems[spec.coordinate];
            *e = m.add(*e, delta);
            delta != RingElement::ZERO
        }
        TamperTarget::Tag => {
            let t = &mut batch.items[spec.position].tag;
            *t = m.add(*t, delta);
            delta != RingElement::ZERO
        }
        TamperTarget::Drop => {
            batch.items.remove(spec.position);
            true
        }
        TamperTarget::Replay => {
            let copy: TaggedShare = batch.items[spec.position].clone();
            batch.items.insert(spec.position + 1, copy);
            true
        }
    };
    Ok(TamperRecord {
        round: batch.round,
        party: batch.party.index(),
        position: spec.position,
        target: spec.target,
        effective,
    })
}
