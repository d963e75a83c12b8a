//! Linear birth–death chain from one particle: rates `n → n+1` at `λn`,
//! `n → n−1` at `n`. This is the total population of the walk when no
//! offspring is ever suppressed.

use crate::error::{Error, Result};

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("lambda", format!("must be positive and finite, got {lambda}")))
    }
}

/// `P{τ ≤ t}` in closed form.
pub fn extinction_cdf(lambda: f64, t: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be nonnegative, got {t}")));
    }
    if t == f64::INFINITY {
        return extinction_probability(lambda);
    }
    let a = lambda - 1.0;
    if a.abs() < 1e-12 {
        return Ok(t / (1.0 + t));
    }
    // (E − 1)/(λE − 1) with E = e^{(λ−1)t}, rewritten to avoid overflow for λ > 1
    Ok(if a > 0.0 {
        let r = (-a * t).exp();
        (1.0 - r) / (lambda - r)
    } else {
        let e = (a * t).exp();
        (e - 1.0) / (lambda * e - 1.0)
    })
}

/// `P{τ < ∞} = min(1, 1/λ)`.
pub fn extinction_probability(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 / lambda).min(1.0))
}

/// Forward equation of the chain truncated at `n_max` (births blocked
/// there), integrated with classical Runge–Kutta.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    pub lambda: f64,
    pub n_max: usize,
    pub dt: f64,
}

impl MasterEquation {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let n_max = 2000;
        // RK4 is stable for |rate|·dt ≲ 2.78; the fastest mode is (1+λ)·n_max
        let dt = (0.5 / ((1.0 + lambda) * n_max as f64)).min(2e-4);
        Ok(Self { lambda, n_max, dt })
    }

    fn derivative(&self, p: &[f64], out: &mut [f64]) {
        let l = self.lambda;
        let n_max = self.n_max;
        for n in 0..=n_max {
            let nf = n as f64;
            let birth_out = if n < n_max { l * nf } else { 0.0 };
            let mut d = -(birth_out + nf) * p[n];
            if n >= 1 {
                d += l * (nf - 1.0) * p[n - 1];
            }
            if n < n_max {
                d += (nf + 1.0) * p[n + 1];
            }
            out[n] = d;
        }
    }

    /// `P{τ ≤ t}` for each `t` in `times` (ascending).
    pub fn cdf_at(&self, times: &[f64]) -> Result<Vec<f64>> {
        if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid("times", "must be finite, nonnegative and ascending"));
        }
        let size = self.n_max + 1;
        let mut p = vec![0.0; size];
        p[1] = 1.0;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            while now < target {
                let h = self.dt.min(target - now);
                self.derivative(&p, &mut k1);
                for i in 0..size {
                    tmp[i] = p[i] + 0.5 * h * k1[i];
                }
                self.derivative(&tmp, &mut k2);
                for i in 0..size {
                    tmp[i] = p[i] + 0.5 * h * k2[i];
                }
                self.derivative(&tmp, &mut k3);
                for i in 0..size {
                    tmp[i] = p[i] + h * k3[i];
                }
                self.derivative(&tmp, &mut k4);
                for i in 0..size {
                    p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                now += h;
                if target - now < 1e-12 {
                    now = target;
                }
            }
            out.push(p[0]);
        }
        Ok(out)
    }
}

/// `P{τ ≤ t}` by integrating the truncated forward equation.
pub fn master_equation_cdf(lambda: f64, t: f64) -> Result<f64> {
    Ok(MasterEquation::new(lambda)?.cdf_at(&[t])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_values() {
        assert_eq!(extinction_cdf(2.0, 0.0).unwrap(), 0.0);
        assert!(extinction_probability(1e9).unwrap() < 1e-8);
        assert_eq!(extinction_probability(0.5).unwrap(), 1.0);
        assert!(extinction_cdf(0.0, 1.0).is_err());
        assert!(extinction_cdf(-1.0, 1.0).is_err());
        assert!((extinction_cdf(3.0, 1e4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((extinction_cdf(0.5, 1e4).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_master_equation() {
        for &lambda in &[0.5, 1.0, 2.0, 4.0] {
            let times = [0.5, 1.0, 2.0, 4.0];
            let numeric = MasterEquation::new(lambda).unwrap().cdf_at(&times).unwrap();
            for (t, m) in times.iter().zip(&numeric) {
                let c = extinction_cdf(lambda, *t).unwrap();
                assert!((c - m).abs() < 1e-8, "lambda={lambda} t={t}: closed {c} numeric {m}");
            }
        }
    }

    #[test]
    fn lambda_two_long_run() {
        let m = master_equation_cdf(2.0, 20.0).unwrap();
        assert!((m - 0.5).abs() < 1e-8, "{m}");
        let at_one = master_equation_cdf(2.0, 1.0).unwrap();
        let e = 1f64.exp();
        assert!((at_one - (e - 1.0) / (2.0 * e - 1.0)).abs() < 1e-8);
    }
}
