//! Secret-shared aggregation over the shuffled bit shares.
//!
//! Linear steps are local. Products go through Beaver triples, whose
//! openings are logged. Comparison and the robust threshold are ideal gates:
//! the backend sees the reconstructed inputs, returns fresh shares, and its
//! traffic is charged per [`GateCostModel`].

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::plaintext::threshold_count;
use crate::ring::{
    check_len, mul_shares, split, Modulus, Party, Prg, RingElement, Seed, ShareVector, SharedVector, TripleStore,
};
use crate::transcript::{MessageKind, OpenKind, RoundTranscript};

/// Elements moved per gate invocation, summed over both parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateCostModel {
    /// Opened values per scalar product (`e` and `f`).
    pub mul_opened: u64,
    /// Per compared pair: both input shares in, one output share back.
    pub cmp_elements: u64,
    /// Per client for the threshold gate.
    pub threshold_per_client: u64,
    pub threshold_fixed: u64,
    /// Per verified shuffled share.
    pub tag_check: u64,
    /// Per client upload.
    pub upload_check: u64,
}

impl Default for GateCostModel {
    fn default() -> Self {
        GateCostModel {
            mul_opened: 2,
            cmp_elements: 4,
            threshold_per_client: 2,
            threshold_fixed: 2,
            tag_check: 2,
            upload_check: 2,
        }
    }
}

/// Comparison functionality: fresh shares of `1` where
/// `centered(x - y) >= 0`, `0` elsewhere.
pub trait CmpBackend: Send {
    fn cmp(&mut self, m: Modulus, x: &SharedVector, y: &SharedVector) -> Result<SharedVector>;
}

/// Reconstructs inside the gate boundary and reshares the result.
pub struct IdealCmp {
    rng: ChaCha20Rng,
}

impl IdealCmp {
    pub fn new(seed: &Seed, round: u64) -> Self {
        IdealCmp {
            rng: Prg::stream(seed, round, "cmp-gate"),
        }
    }
}

/// `|centered(v)| <= (p-1)/4`, the range in which a difference cannot wrap.
pub fn within_headroom(m: Modulus, v: RingElement) -> bool {
    m.centered_lift(v).unsigned_abs() <= (m.value() - 1) / 4
}

impl CmpBackend for IdealCmp {
    fn cmp(&mut self, m: Modulus, x: &SharedVector, y: &SharedVector) -> Result<SharedVector> {
        check_len(x.len(), y.len())?;
        let (xv, yv) = (x.reconstruct(m)?, y.reconstruct(m)?);
        if let Some(j) = (0..xv.len()).find(|&j| !within_headroom(m, xv[j]) || !within_headroom(m, yv[j])) {
            return Err(Error::Headroom(format!("comparison operand {j} exceeds (p-1)/4")));
        }
        let bits: Vec<RingElement> = xv
            .iter()
            .zip(&yv)
            .map(|(&a, &b)| {
                if m.centered_lift(m.sub(a, b)) >= 0 {
                    RingElement::ONE
                } else {
                    RingElement::ZERO
                }
            })
            .collect();
        let (s0, s1) = split(m, &bits, &mut self.rng)?;
        SharedVector::from_pair(s0, s1)
    }
}

/// Worst-case check for the weighted sum: `K * d * (d + 1) < (p - 1) / 2`.
pub fn check_headroom(m: Modulus, k: usize, d: usize) -> Result<()> {
    let need = (k as u128) * (d as u128) * (d as u128 + 1);
    if need >= ((m.value() - 1) / 2) as u128 {
        return Err(Error::Headroom(format!(
            "K*d*(d+1) = {need} must stay below (p-1)/2 = {}",
            (m.value() - 1) / 2
        )));
    }
    Ok(())
}

fn map_shares(x: &SharedVector, mut f: impl FnMut(Party, &[RingElement]) -> Vec<RingElement>) -> SharedVector {
    SharedVector {
        shares: Party::BOTH.map(|p| ShareVector::new(p, f(p, &x.shares[p.index()].elems))),
    }
}

pub fn add_shared(m: Modulus, a: &SharedVector, b: &SharedVector) -> Result<SharedVector> {
    check_len(a.len(), b.len())?;
    Ok(map_shares(a, |p, x| {
        m.add_vec(x, &b.shares[p.index()].elems).expect("checked")
    }))
}

pub fn sub_shared(m: Modulus, a: &SharedVector, b: &SharedVector) -> Result<SharedVector> {
    check_len(a.len(), b.len())?;
    Ok(map_shares(a, |p, x| {
        m.sub_vec(x, &b.shares[p.index()].elems).expect("checked")
    }))
}

pub fn scale_shared(m: Modulus, a: &SharedVector, c: i64) -> SharedVector {
    map_shares(a, |_, x| x.iter().map(|&v| m.scale(v, c)).collect())
}

/// Adds a public constant; only party 0 changes its share.
pub fn add_public(m: Modulus, a: &SharedVector, c: i64) -> SharedVector {
    let c = m.encode(c);
    map_shares(a, |p, x| {
        if p == Party::P0 {
            x.iter().map(|&v| m.add(v, c)).collect()
        } else {
            x.to_vec()
        }
    })
}

/// Replicates the shared scalar at `index` into a length-`n` vector.
pub fn broadcast(a: &SharedVector, index: usize, n: usize) -> SharedVector {
    map_shares(a, |_, x| vec![x[index]; n])
}

/// Sum of all coordinates, as a length-1 vector.
pub fn sum_shared(m: Modulus, a: &SharedVector) -> SharedVector {
    map_shares(a, |_, x| {
        vec![x.iter().fold(RingElement::ZERO, |acc, &v| m.add(acc, v))]
    })
}

/// Concatenates length-1 (or longer) shared vectors.
pub fn concat(parts: &[SharedVector]) -> SharedVector {
    SharedVector {
        shares: Party::BOTH.map(|p| {
            ShareVector::new(
                p,
                parts.iter().flat_map(|s| s.shares[p.index()].elems.clone()).collect(),
            )
        }),
    }
}

/// Shares of `tau_int` plus the public flag saying no client is strictly
/// below it (so every weight will be zero).
pub struct ThresholdOutput {
    pub tau: SharedVector,
    pub no_support: bool,
}

pub struct PhaseTwoOutput {
    /// Shares of the `+-1` sign vector.
    pub s_next: SharedVector,
    pub no_support: bool,
}

/// One party pair's view of a round of Phase II.
pub struct MpcSession {
    pub modulus: Modulus,
    pub cost: GateCostModel,
    pub transcript: RoundTranscript,
    triples: TripleStore,
    consumed: u64,
    cmp: Box<dyn CmpBackend>,
    gate_rng: ChaCha20Rng,
}

impl MpcSession {
    pub fn new(m: Modulus, triples: TripleStore, seed: &Seed, transcript: RoundTranscript) -> Self {
        let round = transcript.round;
        MpcSession {
            modulus: m,
            cost: GateCostModel::default(),
            transcript,
            triples,
            consumed: 0,
            cmp: Box::new(IdealCmp::new(seed, round)),
            gate_rng: Prg::stream(seed, round, "gates"),
        }
    }

    /// Session with freshly generated triples and an empty transcript.
    pub fn standalone(m: Modulus, triples: usize, seed: u64) -> Self {
        let s = Seed::from_u64(seed);
        let store = TripleStore::generate(m, triples, &mut Prg::stream(&s, 0, "triples"));
        MpcSession::new(m, store, &s, RoundTranscript::new(0))
    }

    pub fn with_cmp_backend(mut self, backend: Box<dyn CmpBackend>) -> Self {
        self.cmp = backend;
        self
    }

    pub fn triples_consumed(&self) -> u64 {
        self.consumed
    }

    pub fn triples_remaining(&self) -> usize {
        self.triples.remaining()
    }

    /// Elementwise product through Beaver triples; both differences opened.
    pub fn mul(&mut self, a: &SharedVector, b: &SharedVector) -> Result<SharedVector> {
        check_len(a.len(), b.len())?;
        let n = a.len();
        let triple = self.triples.take(n)?;
        let out = mul_shares(self.modulus, a, b, triple)?;
        self.consumed += n as u64;
        let half = self.cost.mul_opened / 2;
        self.transcript
            .record_open(OpenKind::BeaverE, MessageKind::BeaverOpen, half * n as u64);
        self.transcript.record_open(
            OpenKind::BeaverF,
            MessageKind::BeaverOpen,
            (self.cost.mul_opened - half) * n as u64,
        );
        Ok(out.product)
    }

    /// `a + b - 2ab` on bit shares.
    pub fn xor(&mut self, a: &SharedVector, b: &SharedVector) -> Result<SharedVector> {
        let m = self.modulus;
        let ab = self.mul(a, b)?;
        sub_shared(m, &add_shared(m, a, b)?, &scale_shared(m, &ab, 2))
    }

    /// Number of coordinates where the two bit vectors differ.
    pub fn hamming(&mut self, b: &SharedVector, reference: &SharedVector) -> Result<SharedVector> {
        let x = self.xor(b, reference)?;
        Ok(sum_shared(self.modulus, &x))
    }

    pub fn cmp(&mut self, x: &SharedVector, y: &SharedVector) -> Result<SharedVector> {
        let out = self.cmp.cmp(self.modulus, x, y)?;
        let n = x.len() as u64;
        self.transcript
            .record_open(OpenKind::Cmp, MessageKind::Gate, self.cost.cmp_elements / 2 * n);
        Ok(out)
    }

    /// `(tau - hd_i) * [tau >= hd_i]` for every client; `hd` holds one count per client.
    pub fn relu_weight(&mut self, tau: &SharedVector, hd: &SharedVector) -> Result<SharedVector> {
        let m = self.modulus;
        let t = broadcast(tau, 0, hd.len());
        let mask = self.cmp(&t, hd)?;
        let diff = sub_shared(m, &t, hd)?;
        self.mul(&diff, &mask)
    }

    /// `sum_i w_i * (2 b_i - 1)`, accumulated in client order.
    pub fn weighted_sum(&mut self, weights: &SharedVector, bits: &[SharedVector]) -> Result<SharedVector> {
        let m = self.modulus;
        check_len(weights.len(), bits.len())?;
        let d = bits.first().map(|b| b.len()).ok_or(Error::Empty("no client vectors"))?;
        check_headroom(m, bits.len(), d)?;
        let mut z = SharedVector::public(vec![RingElement::ZERO; d]);
        for (i, b) in bits.iter().enumerate() {
            check_len(d, b.len())?;
            let s = add_public(m, &scale_shared(m, b, 2), -1);
            let w = broadcast(weights, i, d);
            z = add_shared(m, &z, &self.mul(&w, &s)?)?;
        }
        Ok(z)
    }

    /// Shares of `+1` where `centered(z_j) >= 0`, `-1` elsewhere.
    pub fn sign_extract(&mut self, z: &SharedVector) -> Result<SharedVector> {
        let m = self.modulus;
        let zero = SharedVector::public(vec![RingElement::ZERO; z.len()]);
        let c = self.cmp(z, &zero)?;
        Ok(add_public(m, &scale_shared(m, &c, 2), -1))
    }

    /// Robust threshold on the count scale. The gate sees only the unordered
    /// multiset of distances and returns fresh shares of `tau_int`.
    pub fn threshold_oracle(&mut self, hd: &SharedVector, lambda_mad: f64) -> Result<ThresholdOutput> {
        let m = self.modulus;
        if hd.is_empty() {
            return Err(Error::Empty("no distances"));
        }
        let mut values: Vec<u64> = hd.reconstruct(m)?.iter().map(|v| v.value()).collect();
        values.sort_unstable();
        let tau = threshold_count(&values, lambda_mad)?;
        let no_support = values.iter().all(|&h| h >= tau);
        let (s0, s1) = split(m, &[m.encode(tau as i64)], &mut self.gate_rng)?;
        let per_party = (self.cost.threshold_per_client * hd.len() as u64 + self.cost.threshold_fixed) / 2;
        self.transcript
            .record_open(OpenKind::Threshold, MessageKind::Gate, per_party);
        Ok(ThresholdOutput {
            tau: SharedVector::from_pair(s0, s1)?,
            no_support,
        })
    }

    /// Full Phase II on the shuffled bit shares against a shared reference.
    pub fn phase_two(
        &mut self,
        slots: &[SharedVector],
        reference: &SharedVector,
        lambda_mad: f64,
    ) -> Result<PhaseTwoOutput> {
        if slots.is_empty() {
            return Err(Error::Empty("no shuffled shares"));
        }
        let hd_parts = slots
            .iter()
            .map(|b| self.hamming(b, reference))
            .collect::<Result<Vec<_>>>()?;
        let hd = concat(&hd_parts);
        let threshold = self.threshold_oracle(&hd, lambda_mad)?;
        let w = self.relu_weight(&threshold.tau, &hd)?;
        let z = self.weighted_sum(&w, slots)?;
        let s_next = self.sign_extract(&z)?;
        Ok(PhaseTwoOutput {
            s_next,
            no_support: threshold.no_support,
        })
    }

    /// Opens the round output and reads it as signs.
    pub fn reveal_signs(&mut self, s: &SharedVector) -> Result<Vec<i8>> {
        let m = self.modulus;
        let v = s.reconstruct(m)?;
        self.transcript
            .record_open(OpenKind::Output, MessageKind::Gate, v.len() as u64);
        v.iter()
            .map(|&e| match m.centered_lift(e) {
                1 => Ok(1),
                -1 => Ok(-1),
                other => Err(Error::Malformed(format!("sign output {other}"))),
            })
            .collect()
    }
}

/// Shares a public integer vector with a random split; test and harness helper.
pub fn share_ints<R: Rng + ?Sized>(m: Modulus, values: &[i64], rng: &mut R) -> Result<SharedVector> {
    let enc: Vec<RingElement> = values.iter().map(|&v| m.encode(v)).collect();
    let (s0, s1) = split(m, &enc, rng)?;
    SharedVector::from_pair(s0, s1)
}

/// Reconstructs and reads every coordinate under the centered lift.
pub fn open_centered(m: Modulus, x: &SharedVector) -> Result<Vec<i64>> {
    Ok(x.reconstruct(m)?.iter().map(|&v| m.centered_lift(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::SignUpdate;
    use crate::plaintext::{hamming_count, relu_weights_count, sign_of, weighted_sum_count};
    use crate::transcript::audit_openings;
    use rand::SeedableRng;

    fn seeded_rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn m61() -> Modulus {
        Modulus::mersenne61()
    }

    fn bits_shared(rng: &mut ChaCha20Rng, bits: &[bool]) -> SharedVector {
        share_ints(m61(), &bits.iter().map(|&b| b as i64).collect::<Vec<_>>(), rng).unwrap()
    }

    #[test]
    fn xor_truth_table_exhaustive_d2() {
        let mut rng = seeded_rng(1);
        let mut s = MpcSession::standalone(m61(), 64, 1);
        for a in 0..4u8 {
            for b in 0..4u8 {
                let (x, y) = ([a & 1 == 1, a & 2 == 2], [b & 1 == 1, b & 2 == 2]);
                let out = s.xor(&bits_shared(&mut rng, &x), &bits_shared(&mut rng, &y)).unwrap();
                let want: Vec<i64> = (0..2).map(|j| (x[j] != y[j]) as i64).collect();
                assert_eq!(open_centered(m61(), &out).unwrap(), want);
            }
        }
        assert_eq!(s.triples_consumed(), 32);
    }

    #[test]
    fn xor_random_d64() {
        let mut rng = seeded_rng(2);
        let mut s = MpcSession::standalone(m61(), 64 * 20, 2);
        for _ in 0..20 {
            let x: Vec<bool> = (0..64).map(|_| rng.random()).collect();
            let y: Vec<bool> = (0..64).map(|_| rng.random()).collect();
            let out = s.xor(&bits_shared(&mut rng, &x), &bits_shared(&mut rng, &y)).unwrap();
            let want: Vec<i64> = x.iter().zip(&y).map(|(a, b)| (a != b) as i64).collect();
            assert_eq!(open_centered(m61(), &out).unwrap(), want);
        }
    }

    #[test]
    fn hamming_matches_count() {
        let mut rng = seeded_rng(3);
        let d = 32;
        let mut s = MpcSession::standalone(m61(), 502 * d, 3);
        let r: Vec<bool> = (0..d).map(|_| rng.random()).collect();
        let comp: Vec<bool> = r.iter().map(|b| !b).collect();
        let rs = bits_shared(&mut rng, &r);
        assert_eq!(
            open_centered(m61(), &s.hamming(&bits_shared(&mut rng, &r), &rs).unwrap()).unwrap(),
            vec![0]
        );
        assert_eq!(
            open_centered(m61(), &s.hamming(&bits_shared(&mut rng, &comp), &rs).unwrap()).unwrap(),
            vec![d as i64]
        );
        for _ in 0..500 {
            let b: Vec<bool> = (0..d).map(|_| rng.random()).collect();
            let hd = s.hamming(&bits_shared(&mut rng, &b), &rs).unwrap();
            assert_eq!(
                open_centered(m61(), &hd).unwrap()[0] as u64,
                hamming_count(&b, &r).unwrap()
            );
        }
        assert!(s.hamming(&bits_shared(&mut rng, &r), &rs).is_err());
    }

    #[test]
    fn cmp_exhaustive_small_range() {
        let mut rng = seeded_rng(4);
        let mut s = MpcSession::standalone(m61(), 0, 4);
        let vals: Vec<i64> = (-20..=20).collect();
        let xs: Vec<i64> = vals.iter().flat_map(|&x| vals.iter().map(move |_| x)).collect();
        let ys: Vec<i64> = vals.iter().flat_map(|_| vals.iter().copied()).collect();
        let out = s
            .cmp(
                &share_ints(m61(), &xs, &mut rng).unwrap(),
                &share_ints(m61(), &ys, &mut rng).unwrap(),
            )
            .unwrap();
        let got = open_centered(m61(), &out).unwrap();
        for i in 0..xs.len() {
            assert_eq!(got[i], (xs[i] >= ys[i]) as i64, "{} vs {}", xs[i], ys[i]);
        }
    }

    #[test]
    fn cmp_examples_and_headroom() {
        let m = m61();
        let mut rng = seeded_rng(5);
        let mut s = MpcSession::standalone(m, 0, 5);
        let c = s
            .cmp(
                &share_ints(m, &[3, 5], &mut rng).unwrap(),
                &share_ints(m, &[3, 7], &mut rng).unwrap(),
            )
            .unwrap();
        assert_eq!(open_centered(m, &c).unwrap(), vec![1, 0]);
        let big = ((m.value() - 1) / 4 + 1) as i64;
        let err = s.cmp(
            &share_ints(m, &[big], &mut rng).unwrap(),
            &share_ints(m, &[0], &mut rng).unwrap(),
        );
        assert!(matches!(err, Err(Error::Headroom(_))));
    }

    #[test]
    fn relu_weight_grid() {
        let m = m61();
        let mut rng = seeded_rng(6);
        let mut s = MpcSession::standalone(m, 2000, 6);
        for tau in 0..20i64 {
            let hd: Vec<i64> = (0..25).collect();
            let w = s
                .relu_weight(
                    &share_ints(m, &[tau], &mut rng).unwrap(),
                    &share_ints(m, &hd, &mut rng).unwrap(),
                )
                .unwrap();
            let want: Vec<i64> = hd.iter().map(|&h| (tau - h).max(0)).collect();
            assert_eq!(open_centered(m, &w).unwrap(), want);
        }
    }

    #[test]
    fn weighted_sum_examples() {
        let m = m61();
        let mut rng = seeded_rng(7);
        let mut s = MpcSession::standalone(m, 10_000, 7);
        let b = vec![true, false, true];
        let one = s
            .weighted_sum(&share_ints(m, &[1], &mut rng).unwrap(), &[bits_shared(&mut rng, &b)])
            .unwrap();
        assert_eq!(open_centered(m, &one).unwrap(), vec![1, -1, 1]);
        let nb: Vec<bool> = b.iter().map(|x| !x).collect();
        let cancel = s
            .weighted_sum(
                &share_ints(m, &[4, 4], &mut rng).unwrap(),
                &[bits_shared(&mut rng, &b), bits_shared(&mut rng, &nb)],
            )
            .unwrap();
        assert_eq!(open_centered(m, &cancel).unwrap(), vec![0, 0, 0]);

        let (k, d) = (8, 16);
        let ups: Vec<SignUpdate> = (0..k)
            .map(|_| SignUpdate::from_bits((0..d).map(|_| rng.random()).collect()))
            .collect();
        let w: Vec<u64> = (0..k).map(|_| rng.random_range(0..=d as u64)).collect();
        let shares: Vec<SharedVector> = ups.iter().map(|u| bits_shared(&mut rng, &u.bits)).collect();
        let ws = share_ints(m, &w.iter().map(|&x| x as i64).collect::<Vec<_>>(), &mut rng).unwrap();
        let z = s.weighted_sum(&ws, &shares).unwrap();
        assert_eq!(open_centered(m, &z).unwrap(), weighted_sum_count(&ups, &w).unwrap());
    }

    #[test]
    fn sign_extract_examples() {
        let m = m61();
        let mut rng = seeded_rng(8);
        let mut s = MpcSession::standalone(m, 0, 8);
        let out = s.sign_extract(&share_ints(m, &[0, 5, -3], &mut rng).unwrap()).unwrap();
        assert_eq!(s.reveal_signs(&out).unwrap(), vec![1, 1, -1]);
    }

    #[test]
    fn threshold_examples() {
        let m = m61();
        let mut rng = seeded_rng(9);
        let mut s = MpcSession::standalone(m, 0, 9);
        let t = s
            .threshold_oracle(&share_ints(m, &[1, 2, 3, 9], &mut rng).unwrap(), 1.0)
            .unwrap();
        assert_eq!(open_centered(m, &t.tau).unwrap(), vec![4]);
        assert!(!t.no_support);
        let t = s
            .threshold_oracle(&share_ints(m, &[7, 7, 7], &mut rng).unwrap(), 1.0)
            .unwrap();
        assert_eq!(open_centered(m, &t.tau).unwrap(), vec![7]);
        assert!(t.no_support);
    }

    #[test]
    fn headroom_policy() {
        assert!(check_headroom(m61(), 100, 1000).is_ok());
        assert!(check_headroom(Modulus::new(97).unwrap(), 2, 4).is_ok());
        assert!(check_headroom(Modulus::new(97).unwrap(), 3, 4).is_err());
    }

    #[test]
    fn phase_two_matches_plaintext_and_audits() {
        let m = m61();
        let mut rng = seeded_rng(10);
        for trial in 0..20 {
            let (k, d) = (rng.random_range(2..12), rng.random_range(4..24));
            let r: Vec<bool> = (0..d).map(|_| rng.random()).collect();
            let ups: Vec<SignUpdate> = (0..k)
                .map(|_| SignUpdate::from_bits(r.iter().map(|&b| if rng.random_bool(0.3) { !b } else { b }).collect()))
                .collect();
            let mut s = MpcSession::standalone(m, crate::ring::triples_per_round(k, d), trial);
            let slots: Vec<SharedVector> = ups.iter().map(|u| bits_shared(&mut rng, &u.bits)).collect();
            let out = s.phase_two(&slots, &bits_shared(&mut rng, &r), 1.0).unwrap();
            let got = s.reveal_signs(&out.s_next).unwrap();

            let hd: Vec<u64> = ups.iter().map(|u| hamming_count(&u.bits, &r).unwrap()).collect();
            let tau = threshold_count(&hd, 1.0).unwrap();
            let w = relu_weights_count(&hd, tau);
            assert_eq!(got, sign_of(&weighted_sum_count(&ups, &w).unwrap()));
            assert_eq!(out.no_support, w.iter().all(|&x| x == 0));
            assert_eq!(s.triples_remaining(), 0);
            audit_openings(&s.transcript, s.triples_consumed()).unwrap();
        }
    }
}
