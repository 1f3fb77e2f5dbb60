//! Plaintext RAIN aggregation and contrast baselines.
//!
//! This is the reference the secret-shared path is checked against. Sign mode
//! works on integer Hamming counts end to end so that it matches the MPC
//! output bit for bit.

use serde::{Deserialize, Serialize};

use crate::client::{OutputMode, SignUpdate, C_MAD};
use crate::error::{Error, Result};
use crate::ring::check_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    RootData,
    PreviousRound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceDirection {
    pub signs: Vec<i8>,
    pub source: ReferenceSource,
}

impl ReferenceDirection {
    /// Signs of a real vector with `sign(0) = +1`.
    pub fn from_real(v: &[f64], source: ReferenceSource) -> Self {
        ReferenceDirection {
            signs: v.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect(),
            source,
        }
    }

    pub fn from_bits(bits: &[bool], source: ReferenceSource) -> Self {
        ReferenceDirection {
            signs: bits.iter().map(|&b| if b { 1 } else { -1 }).collect(),
            source,
        }
    }

    pub fn bits(&self) -> Vec<bool> {
        self.signs.iter().map(|&s| s > 0).collect()
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

fn check_signs(v: &[i8]) -> Result<()> {
    match v.iter().position(|&s| s != 1 && s != -1) {
        Some(i) => Err(Error::InvalidParameter(format!("sign vector entry {i} is {}", v[i]))),
        None => Ok(()),
    }
}

/// Number of coordinates on which two bit vectors differ.
pub fn hamming_count(a: &[bool], b: &[bool]) -> Result<u64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as u64)
}

/// `(d - b.r) / (2d)` for sign vectors, i.e. the fraction of disagreements.
pub fn hamming_normalized(b: &[i8], r: &[i8]) -> Result<f64> {
    check_len(r.len(), b.len())?;
    if b.is_empty() {
        return Err(Error::Empty("sign vector"));
    }
    check_signs(b)?;
    check_signs(r)?;
    let d = b.len() as i64;
    let dot: i64 = b.iter().zip(r).map(|(&x, &y)| x as i64 * y as i64).sum();
    Ok((d - dot) as f64 / (2 * d) as f64)
}

/// Median with the even-length convention of averaging the middle pair.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("median of an empty list"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median absolute deviation around the median.
pub fn mad(xs: &[f64]) -> Result<f64> {
    let med = median(xs)?;
    let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    median(&dev)
}

/// `median + 1.4826 * lambda * MAD`.
pub fn robust_threshold(distances: &[f64], lambda_mad: f64) -> Result<f64> {
    if let Some(i) = distances.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(median(distances)? + C_MAD * lambda_mad * mad(distances)?)
}

/// Threshold on the integer count scale, rounded to the nearest integer.
pub fn threshold_count(hd: &[u64], lambda_mad: f64) -> Result<u64> {
    let xs: Vec<f64> = hd.iter().map(|&h| h as f64).collect();
    Ok(robust_threshold(&xs, lambda_mad)?.round().max(0.0) as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustWeights {
    /// `max(0, tau - d_i)`.
    pub raw: Vec<f64>,
    /// `raw / sum(raw)`, or all zero when nothing is trusted.
    pub alpha: Vec<f64>,
    pub no_trusted: bool,
}

pub fn relu_weights(distances: &[f64], tau: f64) -> Result<TrustWeights> {
    if !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("threshold must be finite, got {tau}")));
    }
    let raw: Vec<f64> = distances.iter().map(|&d| (tau - d).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        let alpha = raw.iter().map(|w| w / total).collect();
        Ok(TrustWeights {
            raw,
            alpha,
            no_trusted: false,
        })
    } else {
        let alpha = vec![0.0; raw.len()];
        Ok(TrustWeights {
            raw,
            alpha,
            no_trusted: true,
        })
    }
}

/// Integer ReLU weights `max(0, tau - hd_i)` on the count scale.
pub fn relu_weights_count(hd: &[u64], tau: u64) -> Vec<u64> {
    hd.iter().map(|&h| tau.saturating_sub(h)).collect()
}

fn check_dims(updates: &[SignUpdate], weights_len: usize) -> Result<usize> {
    check_len(updates.len(), weights_len)?;
    let d = updates.first().map(|u| u.len()).ok_or(Error::Empty("no updates"))?;
    for u in updates {
        check_len(d, u.len())?;
    }
    Ok(d)
}

/// Weighted mode: `sum_i w_i * s_i`. Sign mode: the coordinate-wise sign of
/// that sum as `+-1.0`, with `sign(0) = +1`; an all-zero weight vector is an
/// error in sign mode and yields the zero vector in weighted mode.
pub fn aggregate(updates: &[SignUpdate], weights: &[f64], mode: OutputMode) -> Result<Vec<f64>> {
    let d = check_dims(updates, weights.len())?;
    let support = weights.iter().any(|&w| w > 0.0);
    if mode == OutputMode::Sign && !support {
        return Err(Error::NoTrustedUpdates);
    }
    let mut z = vec![0.0; d];
    for (u, &w) in updates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (zj, &b) in z.iter_mut().zip(&u.bits) {
            *zj += if b { w } else { -w };
        }
    }
    if mode == OutputMode::Sign {
        for zj in z.iter_mut() {
            *zj = if *zj >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    Ok(z)
}

/// Exact integer sum `sum_i w_i * s_i`.
pub fn weighted_sum_count(updates: &[SignUpdate], weights: &[u64]) -> Result<Vec<i64>> {
    let d = check_dims(updates, weights.len())?;
    let mut z = vec![0i64; d];
    for (u, &w) in updates.iter().zip(weights) {
        let w = w as i64;
        for (zj, &b) in z.iter_mut().zip(&u.bits) {
            *zj += if b { w } else { -w };
        }
    }
    Ok(z)
}

/// Coordinate-wise sign with `sign(0) = +1`.
pub fn sign_of(z: &[i64]) -> Vec<i8> {
    z.iter().map(|&v| if v >= 0 { 1 } else { -1 }).collect()
}

/// `w - eta * g`.
pub fn model_update(w: &[f64], g: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_len(w.len(), g.len())?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {eta}")));
    }
    Ok(w.iter().zip(g).map(|(a, b)| a - eta * b).collect())
}

/// `1 - 2 hd / d`, the cosine of two sign vectors at Hamming count `hd`.
pub fn cosine_from_hamming(hd: u64, d: u64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Empty("dimension"));
    }
    if hd > d {
        return Err(Error::InvalidParameter(format!(
            "hamming count {hd} exceeds dimension {d}"
        )));
    }
    // (d - 2hd) / d is exact in the integer numerator, so it equals the
    // dot-product cosine bit for bit
    Ok((d as i64 - 2 * hd as i64) as f64 / d as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mean,
    CoordMedian,
    MajoritySign,
}

/// Contrast aggregators over real vectors (sign vectors for `MajoritySign`).
pub fn baseline_aggregate(updates: &[Vec<f64>], kind: BaselineKind) -> Result<Vec<f64>> {
    let d = updates.first().map(Vec::len).ok_or(Error::Empty("no updates"))?;
    for u in updates {
        check_len(d, u.len())?;
    }
    let n = updates.len() as f64;
    Ok(match kind {
        BaselineKind::Mean => (0..d).map(|j| updates.iter().map(|u| u[j]).sum::<f64>() / n).collect(),
        BaselineKind::CoordMedian => (0..d)
            .map(|j| median(&updates.iter().map(|u| u[j]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?,
        BaselineKind::MajoritySign => (0..d)
            .map(|j| {
                if updates.iter().map(|u| u[j]).sum::<f64>() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
    })
}

/// Everything one plaintext aggregation round produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainOutcome {
    pub hd: Vec<u64>,
    /// Normalized distances `hd_i / d`.
    pub distances: Vec<f64>,
    /// Threshold on the normalized scale (weighted mode) or the count scale (sign mode).
    pub tau: f64,
    pub weights: TrustWeights,
    /// `None` when every weight is zero.
    pub update: Option<Vec<f64>>,
}

/// Full plaintext aggregation: distances to the reference, robust threshold,
/// ReLU weights and the aggregate in the requested mode.
pub fn rain_aggregate(
    updates: &[SignUpdate],
    reference: &ReferenceDirection,
    lambda_mad: f64,
    mode: OutputMode,
) -> Result<RainOutcome> {
    if updates.is_empty() {
        return Err(Error::Empty("no updates"));
    }
    let r = reference.bits();
    let hd = updates
        .iter()
        .map(|u| hamming_count(&u.bits, &r))
        .collect::<Result<Vec<_>>>()?;
    let d = r.len() as f64;
    let distances: Vec<f64> = hd.iter().map(|&h| h as f64 / d).collect();
    match mode {
        OutputMode::Weighted => {
            let tau = robust_threshold(&distances, lambda_mad)?;
            let weights = relu_weights(&distances, tau)?;
            let update = if weights.no_trusted {
                None
            } else {
                Some(aggregate(updates, &weights.alpha, mode)?)
            };
            Ok(RainOutcome {
                hd,
                distances,
                tau,
                weights,
                update,
            })
        }
        OutputMode::Sign => {
            let tau = threshold_count(&hd, lambda_mad)?;
            let w = relu_weights_count(&hd, tau);
            let raw: Vec<f64> = w.iter().map(|&x| x as f64).collect();
            let total: f64 = raw.iter().sum();
            let no_trusted = total == 0.0;
            let alpha = raw.iter().map(|x| if no_trusted { 0.0 } else { x / total }).collect();
            let update = if no_trusted {
                None
            } else {
                Some(
                    sign_of(&weighted_sum_count(updates, &w)?)
                        .into_iter()
                        .map(f64::from)
                        .collect(),
                )
            };
            Ok(RainOutcome {
                hd,
                distances,
                tau: tau as f64,
                weights: TrustWeights { raw, alpha, no_trusted },
                update,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_bits(rng: &mut ChaCha20Rng, d: usize) -> Vec<bool> {
        (0..d).map(|_| rng.random()).collect()
    }

    #[test]
    fn hamming_examples() {
        let r = [1i8, -1, -1, 1];
        assert_eq!(hamming_normalized(&r, &r).unwrap(), 0.0);
        assert_eq!(hamming_normalized(&[-1, 1, 1, -1], &r).unwrap(), 1.0);
        assert_eq!(hamming_normalized(&[1, 1, -1, 1], &r).unwrap(), 0.25);
        assert_eq!(
            hamming_count(&[true, true, false, true], &[true, false, false, true]).unwrap(),
            1
        );
        assert!(hamming_normalized(&[1, 1], &[1]).is_err());
        assert!(hamming_normalized(&[1, 0], &[1, 1]).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(robust_threshold(&[0.3; 5], 2.0).unwrap(), 0.3);
        let tau = robust_threshold(&[0.1, 0.2, 0.3, 0.9], 1.0).unwrap();
        assert!((tau - 0.39826).abs() < 1e-12, "{tau}");
        assert!(robust_threshold(&[], 1.0).is_err());
        assert_eq!(threshold_count(&[1, 2, 3, 9], 1.0).unwrap(), 4);
        assert_eq!(threshold_count(&[6, 6, 6], 1.0).unwrap(), 6);
    }

    fn brute_median(xs: &[f64]) -> f64 {
        // selection by counting: the k-th smallest is the value with k others below it
        let n = xs.len();
        let kth = |k: usize| {
            *xs.iter()
                .find(|&&x| {
                    let below = xs.iter().filter(|&&y| y < x).count();
                    let equal = xs.iter().filter(|&&y| y == x).count();
                    below <= k && k < below + equal
                })
                .unwrap()
        };
        if n % 2 == 1 {
            kth(n / 2)
        } else {
            (kth(n / 2 - 1) + kth(n / 2)) / 2.0
        }
    }

    #[test]
    fn threshold_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let n = rng.random_range(1..20);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..50) as f64 / 50.0).collect();
            let lambda = rng.random_range(0.0..3.0);
            let med = brute_median(&xs);
            let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
            let expected = med + 1.4826 * lambda * brute_median(&dev);
            assert_eq!(robust_threshold(&xs, lambda).unwrap(), expected);
        }
    }

    #[test]
    fn relu_examples() {
        let w = relu_weights(&[0.1, 0.3, 0.5], 0.4).unwrap();
        let expect = [0.75, 0.25, 0.0];
        for (a, b) in w.alpha.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(relu_weights(&[0.2], 0.5).unwrap().alpha, vec![1.0]);
        let none = relu_weights(&[0.5, 0.6], 0.5).unwrap();
        assert!(none.no_trusted);
        assert_eq!(none.alpha, vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_examples() {
        let u = SignUpdate::from_bits(vec![true, false, true]);
        for mode in [OutputMode::Weighted, OutputMode::Sign] {
            assert_eq!(
                aggregate(std::slice::from_ref(&u), &[1.0], mode).unwrap(),
                vec![1.0, -1.0, 1.0]
            );
        }
        let v = SignUpdate::from_bits(vec![true, true, false]);
        assert_eq!(
            aggregate(&[u.clone(), v.clone()], &[1.0, 1.0], OutputMode::Sign).unwrap()[0],
            1.0
        );
        // tie resolves to +1
        assert_eq!(
            aggregate(&[u.clone(), v.clone()], &[1.0, 1.0], OutputMode::Sign).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        assert_eq!(
            aggregate(std::slice::from_ref(&u), &[0.0], OutputMode::Sign),
            Err(Error::NoTrustedUpdates)
        );
        assert_eq!(aggregate(&[u], &[0.0], OutputMode::Weighted).unwrap(), vec![0.0; 3]);
        assert!(aggregate(
            &[v.clone(), SignUpdate::from_bits(vec![true])],
            &[1.0, 1.0],
            OutputMode::Sign
        )
        .is_err());
    }

    #[test]
    fn sign_mode_is_sign_of_scaled_weighted_mode() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (k, d) = (rng.random_range(1..12), rng.random_range(1..20));
            let ups: Vec<SignUpdate> = (0..k)
                .map(|_| SignUpdate::from_bits(random_bits(&mut rng, d)))
                .collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0..5) as f64).collect();
            let total: f64 = raw.iter().sum();
            if total == 0.0 {
                continue;
            }
            let alpha: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let weighted = aggregate(&ups, &alpha, OutputMode::Weighted).unwrap();
            let sign = aggregate(&ups, &raw, OutputMode::Sign).unwrap();
            let ints: Vec<u64> = raw.iter().map(|&w| w as u64).collect();
            let exact = sign_of(&weighted_sum_count(&ups, &ints).unwrap());
            for j in 0..d {
                assert_eq!(sign[j], exact[j] as f64);
                // away from exact ties the normalized sum has the same sign
                let scaled = weighted[j] * total;
                if scaled.abs() > 1e-9 {
                    assert_eq!(sign[j], scaled.signum());
                }
            }
        }
    }

    #[test]
    fn model_update_examples() {
        assert_eq!(model_update(&[1.0, 2.0], &[0.0, 0.0], 0.5).unwrap(), vec![1.0, 2.0]);
        assert_eq!(model_update(&[0.0, 0.0], &[1.0, -1.0], 1.0).unwrap(), vec![-1.0, 1.0]);
        let a = model_update(&model_update(&[0.5], &[2.0], 0.25).unwrap(), &[-4.0], 0.25).unwrap();
        assert_eq!(a, model_update(&[0.5], &[-2.0], 0.25).unwrap());
        assert!(model_update(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_from_hamming(0, 8).unwrap(), 1.0);
        assert_eq!(cosine_from_hamming(8, 8).unwrap(), -1.0);
        let (b, r) = ([1i8, 1, -1, 1], [1i8, -1, -1, 1]);
        let dot: i32 = b.iter().zip(&r).map(|(&x, &y)| x as i32 * y as i32).sum();
        assert_eq!(cosine_from_hamming(1, 4).unwrap(), dot as f64 / 4.0);
        assert!(cosine_from_hamming(5, 4).is_err());
    }

    #[test]
    fn baselines() {
        let x = vec![0.5, -1.0];
        for kind in [BaselineKind::Mean, BaselineKind::CoordMedian] {
            assert_eq!(baseline_aggregate(&[x.clone(), x.clone()], kind).unwrap(), x);
        }
        let s = vec![1.0, -1.0];
        assert_eq!(
            baseline_aggregate(&[s.clone(), s.clone()], BaselineKind::MajoritySign).unwrap(),
            s
        );
        assert_eq!(
            baseline_aggregate(&[vec![1.0], vec![1.0], vec![-1.0]], BaselineKind::MajoritySign).unwrap(),
            vec![1.0]
        );
        assert!(baseline_aggregate(&[], BaselineKind::Mean).is_err());

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.random_range(1..9);
            let set: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let med = baseline_aggregate(&set, BaselineKind::CoordMedian).unwrap();
            for j in 0..3 {
                let mut col: Vec<f64> = set.iter().map(|u| u[j]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let want = if n % 2 == 1 {
                    col[n / 2]
                } else {
                    (col[n / 2 - 1] + col[n / 2]) / 2.0
                };
                assert_eq!(med[j], want);
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_identity(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64)) {
            let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let sa: Vec<i8> = a.iter().map(|&x| if x { 1 } else { -1 }).collect();
            let sb: Vec<i8> = b.iter().map(|&x| if x { 1 } else { -1 }).collect();
            let d = a.len() as f64;
            let dot: i64 = sa.iter().zip(&sb).map(|(&x, &y)| (x * y) as i64).sum();
            let hd = hamming_count(&a, &b).unwrap();
            prop_assert_eq!(dot, a.len() as i64 - 2 * hd as i64);
            prop_assert_eq!(dot as f64 / d, cosine_from_hamming(hd, a.len() as u64).unwrap());
            let hn = hamming_normalized(&sa, &sb).unwrap();
            prop_assert!((dot as f64 / d - (1.0 - 2.0 * hn)).abs() < 1e-12);
        }

        #[test]
        fn half_threshold_is_cosine_clipping(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
            let (a, r): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let hd = hamming_count(&a, &r).unwrap();
            let d = a.len() as u64;
            let w = relu_weights(&[hd as f64 / d as f64], 0.5).unwrap();
            prop_assert_eq!(w.raw[0] > 0.0, cosine_from_hamming(hd, d).unwrap() > 0.0);
        }

        #[test]
        fn positive_scaling_invariance(seed in any::<u64>(), scale in 1u64..50) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let ups: Vec<SignUpdate> = (0..6).map(|_| SignUpdate::from_bits(random_bits(&mut rng, 10))).collect();
            let w: Vec<u64> = (0..6).map(|_| rng.random_range(0..6)).collect();
            let scaled: Vec<u64> = w.iter().map(|x| x * scale).collect();
            prop_assert_eq!(
                sign_of(&weighted_sum_count(&ups, &w).unwrap()),
                sign_of(&weighted_sum_count(&ups, &scaled).unwrap())
            );
        }

        #[test]
        fn client_order_invariance(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let d = 12;
            let ups: Vec<SignUpdate> = (0..7).map(|_| SignUpdate::from_bits(random_bits(&mut rng, d))).collect();
            let r = ReferenceDirection::from_bits(&random_bits(&mut rng, d), ReferenceSource::RootData);
            let mut perm: Vec<usize> = (0..7).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let shuffled: Vec<SignUpdate> = perm.iter().map(|&i| ups[i].clone()).collect();
            for mode in [OutputMode::Weighted, OutputMode::Sign] {
                let a = rain_aggregate(&ups, &r, 1.0, mode).unwrap();
                let b = rain_aggregate(&shuffled, &r, 1.0, mode).unwrap();
                let permuted: Vec<f64> = perm.iter().map(|&i| a.weights.alpha[i]).collect();
                for (x, y) in b.weights.alpha.iter().zip(&permuted) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                match (a.update, b.update) {
                    (Some(x), Some(y)) => for (p, q) in x.iter().zip(&y) { prop_assert!((p - q).abs() < 1e-12) },
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }

    #[test]
    fn outliers_beyond_threshold_get_zero_weight() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let d = 64;
        let r = random_bits(&mut rng, d);
        let reference = ReferenceDirection::from_bits(&r, ReferenceSource::RootData);
        // 8 honest clients near r, 3 adversaries at the antipode
        let mut ups: Vec<SignUpdate> = (0..8)
            .map(|_| SignUpdate::from_bits(r.iter().map(|&b| if rng.random_bool(0.1) { !b } else { b }).collect()))
            .collect();
        for _ in 0..3 {
            ups.push(SignUpdate::from_bits(r.iter().map(|&b| !b).collect()));
        }
        for mode in [OutputMode::Weighted, OutputMode::Sign] {
            let out = rain_aggregate(&ups, &reference, 2.0, mode).unwrap();
            assert!(out.weights.alpha[8..].iter().all(|&a| a == 0.0));
            assert!(out.weights.alpha[..8].iter().any(|&a| a > 0.0));
        }
    }
}
