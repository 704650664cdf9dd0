use ndarray::{Array3, Zip};

use super::{check_same_shape, Condition, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// Bayes-optimal noise predictor for data `J_0 ~ N(μ, σ²·I)`.
///
/// Used as a ground-truth denoiser when testing samplers: the posterior mean is
/// `E[J_0|J_t] = (σ²·√ᾱ_t·J_t + (1−ᾱ_t)·μ) / (ᾱ_t·σ² + 1 − ᾱ_t)`.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    mean: Array3<f32>,
    variance: f64,
    schedule: NoiseSchedule,
}

pub fn analytic_gaussian_denoiser(mean: Array3<f32>, variance: f64, schedule: &NoiseSchedule) -> Result<GaussianOracle> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::param(format!("variance {variance} must be >= 0")));
    }
    Ok(GaussianOracle {
        mean,
        variance,
        schedule: schedule.clone(),
    })
}

impl GaussianOracle {
    pub fn posterior_mean(&self, state: &Array3<f32>, t: usize) -> Result<Array3<f64>> {
        self.schedule.check_step(t)?;
        check_same_shape(state, &self.mean, "oracle state")?;
        let ab = self.schedule.alpha_bar(t);
        let denom = ab * self.variance + 1.0 - ab;
        let gain = self.variance * ab.sqrt() / denom;
        let prior = (1.0 - ab) / denom;
        Ok(Zip::from(state)
            .and(&self.mean)
            .map_collect(|&x, &m| gain * x as f64 + prior * m as f64))
    }
}

impl Denoiser for GaussianOracle {
    fn predict_noise(&self, state: &Array3<f32>, _: &Condition, t: usize) -> Result<Array3<f32>> {
        let clean = self.posterior_mean(state, t)?;
        let ab = self.schedule.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(Zip::from(state)
            .and(&clean)
            .map_collect(|&x, &c| ((x as f64 - s * c) / n) as f32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_posterior_is_the_mean() {
        let s = NoiseSchedule::default_linear();
        let mu = Array3::from_elem((1, 1, 3), 0.25f32);
        let o = analytic_gaussian_denoiser(mu, 0.0, &s).unwrap();
        let x = Array3::from_shape_vec((1, 1, 3), vec![-1.0f32, 0.3, 2.0]).unwrap();
        let pm = o.posterior_mean(&x, 400).unwrap();
        assert!(pm.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    /// E[J0 | Jt = x] by Simpson quadrature of prior × likelihood.
    fn quadrature_posterior_mean(x: f64, mu: f64, var: f64, ab: f64) -> f64 {
        let (lo, hi, n) = (mu - 12.0 * var.sqrt(), mu + 12.0 * var.sqrt(), 20_000usize);
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=n {
            let j = lo + k as f64 * h;
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let p = normal_pdf(j, mu, var) * normal_pdf(x, ab.sqrt() * j, 1.0 - ab);
            num += w * j * p;
            den += w * p;
        }
        num / den
    }

    #[test]
    fn half_alpha_bar_matches_conjugate_algebra_and_quadrature() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        let o = analytic_gaussian_denoiser(Array3::zeros((1, 1, 1)), 1.0, &s).unwrap();
        for x in [-2.0f32, -0.3, 0.0, 0.9, 3.1] {
            let got = o.posterior_mean(&Array3::from_elem((1, 1, 1), x), 1).unwrap()[[0, 0, 0]];
            assert!((got - 0.5f64.sqrt() * x as f64).abs() < 1e-12);
            let quad = quadrature_posterior_mean(x as f64, 0.0, 1.0, 0.5);
            assert!((got - quad).abs() < 1e-9, "{got} vs {quad}");
        }
    }

    #[test]
    fn general_posterior_matches_quadrature() {
        let s = NoiseSchedule::default_linear();
        let mu = 0.4;
        let var = 0.09;
        let o = analytic_gaussian_denoiser(Array3::from_elem((1, 1, 1), mu as f32), var, &s).unwrap();
        for t in [1usize, 100, 600, 1000] {
            let x = 0.7f32;
            let got = o.posterior_mean(&Array3::from_elem((1, 1, 1), x), t).unwrap()[[0, 0, 0]];
            let quad = quadrature_posterior_mean(x as f64, mu as f32 as f64, var, s.alpha_bar(t));
            assert!((got - quad).abs() < 1e-7, "t={t}: {got} vs {quad}");
        }
    }

    #[test]
    fn rejects_negative_variance() {
        let s = NoiseSchedule::default_linear();
        assert!(analytic_gaussian_denoiser(Array3::zeros((1, 1, 1)), -1.0, &s).is_err());
    }
}
