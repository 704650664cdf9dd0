use ndarray::{Array3, Zip};
use rand_distr::StandardNormal;

use super::{check_same_shape, Condition, NoiseSchedule};
use crate::error::Result;

/// One draw of Algorithm-1 style training data.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub noisy: Array3<f32>,
    pub target_noise: Array3<f32>,
    pub condition: Condition,
    pub timestep: usize,
}

pub fn standard_normal_field(dim: (usize, usize, usize), rng: &mut impl rand::Rng) -> Array3<f32> {
    Array3::from_shape_simple_fn(dim, || rng.sample::<f32, _>(StandardNormal))
}

/// Closed-form marginal `√ᾱ_t·J_0 + √(1−ᾱ_t)·ε`.
pub fn forward_marginal_sample(
    clean: &Array3<f32>,
    t: usize,
    eps: &Array3<f32>,
    schedule: &NoiseSchedule,
) -> Result<Array3<f32>> {
    schedule.check_step(t)?;
    check_same_shape(clean, eps, "forward marginal noise")?;
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(clean)
        .and(eps)
        .map_collect(|&x, &e| (s * x as f64 + n * e as f64) as f32))
}

/// One Markov transition `√(1−β_t)·J_{t−1} + √β_t·ε`.
pub fn forward_chain_step(
    prev: &Array3<f32>,
    t: usize,
    eps: &Array3<f32>,
    schedule: &NoiseSchedule,
) -> Result<Array3<f32>> {
    schedule.check_step(t)?;
    check_same_shape(prev, eps, "forward chain noise")?;
    let b = schedule.beta(t);
    let (s, n) = ((1.0 - b).sqrt(), b.sqrt());
    Ok(Zip::from(prev)
        .and(eps)
        .map_collect(|&x, &e| (s * x as f64 + n * e as f64) as f32))
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` from `rng`, in that order.
pub fn make_training_example(
    clean: &Array3<f32>,
    condition: Condition,
    schedule: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<TrainingExample> {
    let t = rng.random_range(1..=schedule.steps());
    let eps = standard_normal_field(clean.dim(), rng);
    let noisy = forward_marginal_sample(clean, t, &eps, schedule)?;
    Ok(TrainingExample {
        noisy,
        target_noise: eps,
        condition,
        timestep: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{DegMask, ImageF};
    use crate::seed::rng_from_seed;

    fn dummy_condition() -> Condition {
        Condition::new(ImageF::filled(2, 3, 1, 0.5).unwrap(), DegMask::zeros(2, 3)).unwrap()
    }

    #[test]
    fn near_identity_at_first_step() {
        let s = NoiseSchedule::default_linear();
        let j0 = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f32 / 16.0);
        let eps = standard_normal_field((1, 4, 4), &mut rng_from_seed(3));
        let out = forward_marginal_sample(&j0, 1, &eps, &s).unwrap();
        let norm = eps.iter().map(|e| (*e as f64).powi(2)).sum::<f64>().sqrt();
        let dist = (&out - &j0).iter().map(|e| (*e as f64).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= s.beta(1).sqrt() * norm + 1e-6);
    }

    #[test]
    fn zero_image_gives_scaled_noise() {
        let s = NoiseSchedule::default_linear();
        let eps = standard_normal_field((2, 3, 3), &mut rng_from_seed(1));
        let out = forward_marginal_sample(&Array3::zeros((2, 3, 3)), 500, &eps, &s).unwrap();
        let n = (1.0 - s.alpha_bar(500)).sqrt();
        for (o, e) in out.iter().zip(&eps) {
            assert_eq!(*o, (n * *e as f64) as f32);
        }
    }

    #[test]
    fn out_of_range_step_and_shape() {
        let s = NoiseSchedule::default_linear();
        let z = Array3::zeros((1, 2, 2));
        assert!(forward_marginal_sample(&z, 0, &z, &s).is_err());
        assert!(forward_marginal_sample(&z, 1001, &z, &s).is_err());
        assert!(forward_chain_step(&z, 1, &Array3::zeros((1, 2, 3)), &s).is_err());
    }

    #[test]
    fn chain_step_limits() {
        let tiny = NoiseSchedule::linear(1, 1e-12, 1e-12).unwrap();
        let x = Array3::from_elem((1, 2, 2), 0.37f32);
        let e = Array3::from_elem((1, 2, 2), 1.0f32);
        let out = forward_chain_step(&x, 1, &e, &tiny).unwrap();
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-5));

        let s = NoiseSchedule::linear(1, 0.19, 0.19).unwrap();
        let one = Array3::from_elem((1, 2, 2), 1.0f32);
        let out = forward_chain_step(&one, 1, &Array3::zeros((1, 2, 2)), &s).unwrap();
        assert!(out.iter().all(|v| (v - 0.9).abs() < 1e-7));
    }

    #[test]
    fn training_example_is_reproducible_and_invertible() {
        let s = NoiseSchedule::default_linear();
        let j0 = Array3::from_shape_fn((1, 2, 3), |(_, y, x)| (y + x) as f32 / 4.0);
        let a = make_training_example(&j0, dummy_condition(), &s, &mut rng_from_seed(9)).unwrap();
        let b = make_training_example(&j0, dummy_condition(), &s, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a.timestep, b.timestep);
        assert_eq!(a.target_noise, b.target_noise);
        let ab = s.alpha_bar(a.timestep);
        for ((n, x), e) in a.noisy.iter().zip(&j0).zip(&a.target_noise) {
            let rec = (*n as f64 - ab.sqrt() * *x as f64) / (1.0 - ab).sqrt();
            assert!((rec - *e as f64).abs() < 1e-6 * (1.0 / (1.0 - ab).sqrt()).max(1.0));
        }
    }

    #[test]
    fn timestep_histogram_is_uniform() {
        // Chi-square with 9 degrees of freedom over 10 equal bins of 1..=1000.
        let s = NoiseSchedule::default_linear();
        let j0 = Array3::zeros((1, 1, 1));
        let mut rng = rng_from_seed(2024);
        let mut bins = [0usize; 10];
        let n = 100_000;
        for _ in 0..n {
            let ex = make_training_example(&j0, dummy_condition(), &s, &mut rng).unwrap();
            bins[(ex.timestep - 1) / 100] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 0.99 quantile of chi-square(9).
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
