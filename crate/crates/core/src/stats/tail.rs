use serde::{Deserialize, Serialize};

use super::wilson;
use crate::engine::Outcome;
use crate::error::{Error, Result};

/// Empirical `P{s < τ < ∞}` over a grid of `s`.
///
/// Replicas that did not go extinct count in the denominator only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub grid: Vec<f64>,
    pub tail: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Extinct replicas with `τ > s`, per grid point.
    pub counts: Vec<u64>,
    pub total: u64,
    pub extinct: u64,
    pub censored_horizon: u64,
    pub censored_cap: u64,
}

impl TailEstimate {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `s,tail,lower,upper,count,total`
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,tail,lower,upper,count,total")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.grid[i], self.tail[i], self.lower[i], self.upper[i], self.counts[i], self.total
            )?;
        }
        Ok(())
    }
}

/// Tail over engine outcomes.
pub fn tail_estimate(outcomes: &[Outcome], grid: &[f64]) -> Result<TailEstimate> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no replicas"));
    }
    let mut finite = Vec::with_capacity(outcomes.len());
    let (mut horizon, mut cap) = (0, 0);
    for o in outcomes {
        match *o {
            Outcome::Extinct { tau } => finite.push(tau),
            Outcome::CensoredHorizon { .. } => horizon += 1,
            Outcome::CensoredCap { .. } => cap += 1,
        }
    }
    Ok(build(finite, horizon, cap, grid))
}

/// Tail over raw values; `None` stands for an infinite value (survival).
pub fn tail_from_values(values: &[Option<f64>], grid: &[f64]) -> Result<TailEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no samples"));
    }
    let finite: Vec<f64> = values.iter().flatten().copied().collect();
    let infinite = (values.len() - finite.len()) as u64;
    Ok(build(finite, infinite, 0, grid))
}

fn build(mut finite: Vec<f64>, horizon: u64, cap: u64, grid: &[f64]) -> TailEstimate {
    finite.sort_by(f64::total_cmp);
    let total = finite.len() as u64 + horizon + cap;
    let mut est = TailEstimate {
        grid: grid.to_vec(),
        tail: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
        counts: Vec::with_capacity(grid.len()),
        total,
        extinct: finite.len() as u64,
        censored_horizon: horizon,
        censored_cap: cap,
    };
    for &s in grid {
        let above = (finite.len() - finite.partition_point(|&t| t <= s)) as u64;
        let (lo, hi) = wilson(above, total);
        est.counts.push(above);
        est.tail.push(above as f64 / total as f64);
        est.lower.push(lo);
        est.upper.push(hi);
    }
    est
}

/// `start, start + step, …` up to and including `stop` (within rounding).
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::invalid("grid", format!("need start <= stop and step > 0, got {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 10_000_000 {
        return Err(Error::invalid("grid", "more than 10^7 points"));
    }
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_extinct_at_one() {
        let o = vec![Outcome::Extinct { tau: 1.0 }; 10];
        let t = tail_estimate(&o, &[0.5, 1.5]).unwrap();
        assert_eq!(t.tail, vec![1.0, 0.0]);
    }

    #[test]
    fn survivors_only_in_denominator() {
        let o = vec![
            Outcome::Extinct { tau: 2.0 },
            Outcome::CensoredHorizon { alive: 3 },
            Outcome::CensoredCap { alive: 10 },
            Outcome::Extinct { tau: 0.5 },
        ];
        let t = tail_estimate(&o, &[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(t.tail, vec![0.5, 0.25, 0.0]);
        assert_eq!((t.extinct, t.censored_horizon, t.censored_cap), (2, 1, 1));
        let none = tail_estimate(&[Outcome::CensoredCap { alive: 1 }], &[0.0, 1.0]).unwrap();
        assert_eq!(none.tail, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(tail_estimate(&[], &[1.0]), Err(Error::EmptyInput("no replicas")));
    }

    #[test]
    fn grid_spec() {
        let g = linear_grid(0.0, 1.0, 0.25).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(linear_grid(0.0, 0.3, 0.1).unwrap().len(), 4);
        assert!(linear_grid(1.0, 0.0, 0.1).is_err());
        assert!(linear_grid(0.0, 1.0, 0.0).is_err());
    }
}
