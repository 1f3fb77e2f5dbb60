//! Two-server secret-shared shuffle.
//!
//! Both parties apply the same joint permutation `pi` from the dealer bundle
//! and add their half of a zero-sum pad, so
//! `out0[i] + out1[i] = in0[pi(i)] + in1[pi(i)]` while each party's output on
//! its own is a fresh uniform vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::{
    check_len, dealer_setup, split_with_mask, DealerBundle, Modulus, Party, Permutation, RingElement, Seed, ShareVector,
};
use crate::stats::{bin_of, chi_squared_two_sample};

#[derive(Debug, Clone)]
pub struct ShuffleState {
    pub modulus: Modulus,
    pub round: u64,
    pub k: usize,
    pub d: usize,
    pub permutation: Permutation,
    masks: [Option<Vec<Vec<RingElement>>>; 2],
}

/// Takes the permutation and pads for one round out of a dealer bundle.
pub fn shuffle_offline(bundle: &DealerBundle, k: usize, d: usize) -> Result<ShuffleState> {
    if bundle.k != k || bundle.d != d {
        return Err(Error::BundleMismatch(format!(
            "bundle is for K={}, d={}; shuffle asked for K={k}, d={d}",
            bundle.k, bundle.d
        )));
    }
    Ok(ShuffleState {
        modulus: bundle.modulus,
        round: bundle.round,
        k,
        d,
        permutation: bundle.permutation.clone(),
        masks: [Some(bundle.masks[0].clone()), Some(bundle.masks[1].clone())],
    })
}

impl ShuffleState {
    /// Replaces both pads with zeros. Test hook for negative controls only.
    pub fn with_masks_disabled(mut self) -> Self {
        let zero = vec![vec![RingElement::ZERO; self.d]; self.k];
        self.masks = [Some(zero.clone()), Some(zero)];
        self
    }

    pub fn masks_available(&self, party: Party) -> bool {
        self.masks[party.index()].is_some()
    }

    /// `out[i] = shares[pi(i)] + r_party[i]`. The party's pad is consumed.
    pub fn apply(&mut self, party: Party, shares: &[ShareVector]) -> Result<Vec<ShareVector>> {
        check_len(self.k, shares.len())?;
        for s in shares {
            if s.party != party {
                return Err(Error::WrongParty {
                    expected: party.index(),
                    actual: s.party.index(),
                });
            }
            check_len(self.d, s.len())?;
            self.modulus.check_all(&s.elems)?;
        }
        let masks = self.masks[party.index()]
            .take()
            .ok_or(Error::MaskReuse(party.index()))?;
        let m = self.modulus;
        (0..self.k)
            .map(|i| {
                let src = &shares[self.permutation.source(i)];
                Ok(ShareVector::new(party, m.add_vec(&src.elems, &masks[i])?))
            })
            .collect()
    }
}

/// Result of comparing one party's view across two runs.
#[derive(Clone, Debug, PartialEq)]
pub struct AnonymityReport {
    pub tests: usize,
    pub min_p_value: f64,
    /// Per-test rejection level after the Bonferroni correction.
    pub alpha: f64,
    pub distinguishable: bool,
}

/// Two-sample chi-squared test per (slot, coordinate) on one party's
/// received shares from two runs. `view_a[t][i]` is trial `t`, slot `i`.
pub fn anonymity_check(
    m: Modulus,
    view_a: &[Vec<ShareVector>],
    view_b: &[Vec<ShareVector>],
    bins: usize,
) -> Result<AnonymityReport> {
    let first = view_a.first().ok_or(Error::Empty("anonymity view"))?;
    let k = first.len();
    let d = first.first().map(|s| s.len()).ok_or(Error::Empty("anonymity view"))?;
    let histogram = |view: &[Vec<ShareVector>], i: usize, j: usize| -> Result<Vec<u64>> {
        let mut h = vec![0u64; bins];
        for trial in view {
            check_len(k, trial.len())?;
            check_len(d, trial[i].len())?;
            h[bin_of(trial[i].elems[j].value(), m.value(), bins)] += 1;
        }
        Ok(h)
    };
    let tests = k * d;
    let mut min_p: f64 = 1.0;
    for i in 0..k {
        for j in 0..d {
            min_p = min_p.min(chi_squared_two_sample(
                &histogram(view_a, i, j)?,
                &histogram(view_b, i, j)?,
            ));
        }
    }
    let alpha = 0.001 / tests as f64;
    Ok(AnonymityReport {
        tests,
        min_p_value: min_p,
        alpha,
        distinguishable: min_p < alpha,
    })
}

/// Collects party 1's shuffled view over `trials` rounds for fixed client
/// inputs. Clients split with a zero share 0, so party 1 receives the raw
/// inputs and only the pads can hide them. The permutation is held fixed
/// across trials while the pads are fresh each time.
pub fn collect_party_view<R: Rng + ?Sized>(
    m: Modulus,
    inputs: &[Vec<RingElement>],
    permutation: &Permutation,
    trials: usize,
    masks_enabled: bool,
    rng: &mut R,
) -> Result<Vec<Vec<ShareVector>>> {
    let k = inputs.len();
    let d = inputs.first().map(Vec::len).ok_or(Error::Empty("no inputs"))?;
    let shares: Vec<ShareVector> = inputs
        .iter()
        .map(|x| split_with_mask(m, x, vec![RingElement::ZERO; d]).map(|(_, s1)| s1))
        .collect::<Result<_>>()?;
    (0..trials)
        .map(|t| {
            let bundle = dealer_setup(m, &Seed::from_u64(rng.random()), k, d, t as u64)?;
            let mut state = shuffle_offline(&bundle, k, d)?;
            state.permutation = permutation.clone();
            if !masks_enabled {
                state = state.with_masks_disabled();
            }
            state.apply(Party::P1, &shares)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{reconstruct, split};
    use crate::stats::chi_squared_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn shared_inputs(
        m: Modulus,
        k: usize,
        d: usize,
        rng: &mut ChaCha20Rng,
    ) -> (Vec<Vec<RingElement>>, Vec<ShareVector>, Vec<ShareVector>) {
        let secrets: Vec<Vec<RingElement>> = (0..k).map(|_| m.random_vec(d, rng)).collect();
        let (mut s0, mut s1) = (Vec::new(), Vec::new());
        for x in &secrets {
            let (a, b) = split(m, x, rng).unwrap();
            s0.push(a);
            s1.push(b);
        }
        (secrets, s0, s1)
    }

    fn run(state: &mut ShuffleState, s0: &[ShareVector], s1: &[ShareVector]) -> Vec<Vec<RingElement>> {
        let m = state.modulus;
        let o0 = state.apply(Party::P0, s0).unwrap();
        let o1 = state.apply(Party::P1, s1).unwrap();
        o0.iter().zip(&o1).map(|(a, b)| reconstruct(m, a, b).unwrap()).collect()
    }

    #[test]
    fn identity_without_masks_is_identity() {
        let m = Modulus::new(97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bundle = dealer_setup(m, &Seed::from_u64(1), 4, 3, 0).unwrap();
        let mut state = shuffle_offline(&bundle, 4, 3).unwrap().with_masks_disabled();
        state.permutation = Permutation::identity(4);
        let (_, s0, s1) = shared_inputs(m, 4, 3, &mut rng);
        assert_eq!(state.apply(Party::P0, &s0).unwrap(), s0);
        assert_eq!(state.apply(Party::P1, &s1).unwrap(), s1);
    }

    #[test]
    fn three_cycle_example() {
        // pi = (2,3,1) in 1-based notation: slot 1 receives input 2, etc.
        let m = Modulus::new(97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let bundle = dealer_setup(m, &Seed::from_u64(2), 3, 2, 0).unwrap();
        let mut state = shuffle_offline(&bundle, 3, 2).unwrap();
        state.permutation = Permutation::from_vec(vec![1, 2, 0]).unwrap();
        let (secrets, s0, s1) = shared_inputs(m, 3, 2, &mut rng);
        assert_eq!(
            run(&mut state, &s0, &s1),
            vec![secrets[1].clone(), secrets[2].clone(), secrets[0].clone()]
        );
    }

    #[test]
    fn correctness_on_random_configurations() {
        let m = Modulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for t in 0..50 {
            let (k, d) = (rng.random_range(1..60), rng.random_range(1..40));
            let bundle = dealer_setup(m, &Seed::from_u64(t), k, d, t).unwrap();
            let mut state = shuffle_offline(&bundle, k, d).unwrap();
            let (secrets, s0, s1) = shared_inputs(m, k, d, &mut rng);
            let out = run(&mut state, &s0, &s1);
            for (i, row) in out.iter().enumerate() {
                assert_eq!(row, &secrets[bundle.permutation.source(i)]);
            }
            let (mut a, mut b) = (out, secrets);
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn double_shuffle_composes() {
        let m = Modulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (k, d) = (9, 4);
        let ba = dealer_setup(m, &Seed::from_u64(40), k, d, 0).unwrap();
        let bb = dealer_setup(m, &Seed::from_u64(41), k, d, 0).unwrap();
        let (secrets, s0, s1) = shared_inputs(m, k, d, &mut rng);
        let mut sa = shuffle_offline(&ba, k, d).unwrap();
        let mid = (sa.apply(Party::P0, &s0).unwrap(), sa.apply(Party::P1, &s1).unwrap());
        let mut sb = shuffle_offline(&bb, k, d).unwrap();
        let out = run(&mut sb, &mid.0, &mid.1);
        let composite = ba.permutation.then(&bb.permutation);
        assert_eq!(out, composite.apply(&secrets).unwrap());
    }

    #[test]
    fn errors() {
        let m = Modulus::new(97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let bundle = dealer_setup(m, &Seed::from_u64(5), 3, 2, 0).unwrap();
        assert!(matches!(shuffle_offline(&bundle, 4, 2), Err(Error::BundleMismatch(_))));
        let mut state = shuffle_offline(&bundle, 3, 2).unwrap();
        let (_, s0, s1) = shared_inputs(m, 3, 2, &mut rng);
        assert!(matches!(state.apply(Party::P0, &s1), Err(Error::WrongParty { .. })));
        assert!(matches!(
            state.apply(Party::P0, &s0[..2]),
            Err(Error::LengthMismatch { .. })
        ));
        state.apply(Party::P0, &s0).unwrap();
        assert_eq!(state.apply(Party::P0, &s0), Err(Error::MaskReuse(0)));
        assert!(state.masks_available(Party::P1));
    }

    #[test]
    fn permutation_uniform_for_three_clients() {
        let m = Modulus::new(97).unwrap();
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for s in 0..n {
            let b = dealer_setup(m, &Seed::from_u64(s), 3, 1, 0).unwrap();
            *counts.entry(b.permutation.as_slice().to_vec()).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn single_party_output_uniform_mod_97() {
        let m = Modulus::new(97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let secret = [vec![m.elem(5).unwrap()], vec![m.elem(90).unwrap()]];
        let shares: Vec<ShareVector> = secret
            .iter()
            .map(|x| split_with_mask(m, x, vec![RingElement::ZERO]).unwrap().1)
            .collect();
        let mut counts = vec![0u64; 97];
        for t in 0..50_000u64 {
            let bundle = dealer_setup(m, &Seed::from_u64(rng.random()), 2, 1, t).unwrap();
            let mut state = shuffle_offline(&bundle, 2, 1).unwrap();
            for s in state.apply(Party::P1, &shares).unwrap() {
                counts[s.elems[0].value() as usize] += 1;
            }
        }
        assert!(chi_squared_uniform(&counts) > 0.001);
    }

    fn anonymity(masks: bool, swap: bool, seed: u64) -> AnonymityReport {
        let m = Modulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (k, d) = (4, 3);
        let a: Vec<Vec<RingElement>> = (0..k)
            .map(|i| vec![m.elem(i as u64 * (m.value() / k as u64)).unwrap(); d])
            .collect();
        let mut b = a.clone();
        if swap {
            b.swap(0, 1);
        }
        let pi = Permutation::random(k, &mut rng);
        let va = collect_party_view(m, &a, &pi, 100, masks, &mut rng).unwrap();
        let vb = collect_party_view(m, &b, &pi, 100, masks, &mut rng).unwrap();
        anonymity_check(m, &va, &vb, 10).unwrap()
    }

    #[test]
    fn anonymity_with_masks() {
        assert!(!anonymity(true, true, 7).distinguishable);
        assert!(!anonymity(true, false, 8).distinguishable);
    }

    #[test]
    fn anonymity_negative_control() {
        assert!(anonymity(false, true, 9).distinguishable);
        assert!(!anonymity(false, false, 10).distinguishable);
    }
}
