use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Kolmogorov–Smirnov distance between the sample and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of a KS distance `d` on `n` samples (Stephens' correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let z = (sn + 0.12 + 0.11 / sn) * d;
    if z < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * z * z).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS p-value of the sample against `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let d = ks_statistic(samples, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-rate * x).exp() });
    ks_p_value(d, samples.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    /// Success probability of the fitted geometric law on {1, 2, …}.
    pub theta_hat: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// `(first value, last value or None for the open tail bin, observed, expected)`.
    pub bins: Vec<(u64, Option<u64>, u64, f64)>,
}

impl ChiSquareReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Pearson test of `g ∈ {1, 2, …}` against a geometric law with the
/// maximum-likelihood parameter `N / Σg`. Adjacent bins are merged until
/// every expected count is at least 5; one degree of freedom is spent on
/// the estimate.
pub fn chi_square_geometric(g: &[u64]) -> Result<ChiSquareReport> {
    if g.is_empty() {
        return Err(Error::EmptyInput("no attempt counts"));
    }
    if g.contains(&0) {
        return Err(Error::invalid("g", "values start at 1"));
    }
    let n = g.len() as f64;
    let theta = n / g.iter().sum::<u64>() as f64;
    let max = *g.iter().max().unwrap();
    let mut observed = vec![0u64; max as usize + 1];
    for &v in g {
        observed[v as usize] += 1;
    }
    let pmf = |k: u64| theta * (1.0 - theta).powi(k as i32 - 1);
    let mut bins: Vec<(u64, Option<u64>, u64, f64)> = Vec::new();
    let mut start = 1u64;
    let mut obs = 0u64;
    let mut exp = 0.0;
    for k in 1..=max {
        obs += observed[k as usize];
        exp += n * pmf(k);
        let tail_left = n * (1.0 - theta).powi(k as i32);
        if exp >= 5.0 && tail_left >= 5.0 {
            bins.push((start, Some(k), obs, exp));
            start = k + 1;
            obs = 0;
            exp = 0.0;
        }
    }
    // open tail bin {start, start+1, …}
    let tail_exp = n * (1.0 - theta).powi(start as i32 - 1);
    bins.push((start, None, obs, tail_exp));
    if bins.len() >= 2 && bins.last().unwrap().3 < 5.0 {
        let (_, _, o, e) = bins.pop().unwrap();
        let last = bins.last_mut().unwrap();
        last.1 = None;
        last.2 += o;
        last.3 += e;
    }
    let statistic: f64 = bins.iter().map(|(_, _, o, e)| (*o as f64 - e).powi(2) / e).sum();
    let df = bins.len().saturating_sub(2);
    let p_value = if df == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df as f64).map_err(|e| Error::Invariant(e.to_string()))?.cdf(statistic)
    };
    Ok(ChiSquareReport {
        theta_hat: theta,
        statistic,
        df,
        p_value,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, RandomStream};

    #[test]
    fn ks_accepts_true_law_and_rejects_wrong_rate() {
        let mut rng = RandomStream::new(5, Lane::Custom(0));
        let x: Vec<f64> = (0..10_000).map(|_| rng.exponential(2.0)).collect();
        assert!(ks_exponential(&x, 2.0) > 0.001);
        assert!(ks_exponential(&x, 2.2) < 0.001);
    }

    #[test]
    fn ks_p_value_reference_points() {
        // Kolmogorov distribution: P{K > 1.36} ≈ 0.0494, P{K > 1.63} ≈ 0.0098
        let n = 1_000_000;
        let scale = (n as f64).sqrt();
        assert!((ks_p_value(1.36 / scale, n) - 0.0494).abs() < 1e-3);
        assert!((ks_p_value(1.63 / scale, n) - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn chi_square_geometric_sample() {
        let mut rng = RandomStream::new(9, Lane::Custom(1));
        let g: Vec<u64> = (0..2000)
            .map(|_| {
                let mut k = 1;
                while rng.uniform() >= 0.4 {
                    k += 1;
                }
                k
            })
            .collect();
        let r = chi_square_geometric(&g).unwrap();
        assert!((r.theta_hat - 0.4).abs() < 0.03);
        assert!(r.passes(0.001), "{r:?}");
        assert!(r.bins.iter().all(|b| b.3 >= 5.0));
        let total: u64 = r.bins.iter().map(|b| b.2).sum();
        assert_eq!(total, 2000);
    }

    #[test]
    fn chi_square_rejects_two_point_law() {
        let g: Vec<u64> = (0..1000).map(|i| if i % 2 == 0 { 1 } else { 3 }).collect();
        assert!(!chi_square_geometric(&g).unwrap().passes(0.001));
    }
}
