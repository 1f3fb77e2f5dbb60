//! Chi-squared helpers used by the statistical checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's goodness-of-fit test against a uniform
/// distribution over `counts.len()` categories.
pub fn chi_squared_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let k = counts.len();
    if k < 2 || n == 0 {
        return 1.0;
    }
    let expected = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    upper_tail(stat, (k - 1) as f64)
}

/// Upper-tail p-value of the two-sample chi-squared homogeneity test.
/// Categories empty in both samples are ignored.
pub fn chi_squared_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb): (u64, u64) = (a.iter().sum(), b.iter().sum());
    if na == 0 || nb == 0 {
        return 1.0;
    }
    let n = (na + nb) as f64;
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        used += 1;
        let ea = col * na as f64 / n;
        let eb = col * nb as f64 / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if used < 2 {
        return 1.0;
    }
    upper_tail(stat, (used - 1) as f64)
}

fn upper_tail(stat: f64, dof: f64) -> f64 {
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
}

/// Bins a residue in `[0, p)` into one of `bins` equal-width buckets.
pub fn bin_of(value: u64, modulus: u64, bins: usize) -> usize {
    ((value as u128 * bins as u128) / modulus as u128) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts_pass_and_skewed_fail() {
        assert!(chi_squared_uniform(&[100, 98, 103, 99]) > 0.5);
        assert!(chi_squared_uniform(&[400, 0, 0, 0]) < 1e-6);
    }

    #[test]
    fn known_statistic() {
        // stat = 4 with 1 dof: upper tail 0.0455003
        assert!((chi_squared_uniform(&[60, 40]) - 0.045_500_264).abs() < 1e-6);
    }

    #[test]
    fn two_sample() {
        assert!(chi_squared_two_sample(&[50, 50], &[48, 52]) > 0.5);
        assert!(chi_squared_two_sample(&[100, 0], &[0, 100]) < 1e-6);
        assert_eq!(chi_squared_two_sample(&[100, 0], &[100, 0]), 1.0);
    }

    #[test]
    fn bins() {
        assert_eq!(bin_of(0, 97, 10), 0);
        assert_eq!(bin_of(96, 97, 10), 9);
    }
}
