use std::path::Path;

use ndarray::{Array3, Zip};
use serde::Serialize;

use super::forward::standard_normal_field;
use super::{check_same_shape, state_to_image, Condition, NoiseSchedule};
use crate::error::{Error, Result};
use crate::raster::ImageF;
use crate::seed::rng_from_seed;

/// A noise predictor `ε̂(J_t, condition, t)`.
///
/// Implementations must return an array co-shaped with `state` and be
/// deterministic for fixed parameters.
pub trait Denoiser {
    fn predict_noise(&self, state: &Array3<f32>, condition: &Condition, t: usize) -> Result<Array3<f32>>;

    /// Batched prediction; item `i` must equal `predict_noise(states[i], conditions[i], t)`.
    fn predict_noise_batch(
        &self,
        states: &[Array3<f32>],
        conditions: &[&Condition],
        t: usize,
    ) -> Result<Vec<Array3<f32>>> {
        states
            .iter()
            .zip(conditions)
            .map(|(s, c)| self.predict_noise(s, c, t))
            .collect()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, state: &Array3<f32>, condition: &Condition, t: usize) -> Result<Array3<f32>> {
        (**self).predict_noise(state, condition, t)
    }

    fn predict_noise_batch(
        &self,
        states: &[Array3<f32>],
        conditions: &[&Condition],
        t: usize,
    ) -> Result<Vec<Array3<f32>>> {
        (**self).predict_noise_batch(states, conditions, t)
    }
}

/// `(t, t_next)` for sampling iteration `i` of `S` (1-based, visited from `S` down to 1).
///
/// `t = (i−1)·T/S + 1` with floor division; `t_next` is the same expression at
/// `i − 1`, or 0 on the last iteration.
pub fn timestep_subsequence(total: usize, steps: usize, i: usize) -> Result<(usize, usize)> {
    if steps == 0 || steps > total {
        return Err(Error::param(format!("need 1 <= S ({steps}) <= T ({total})")));
    }
    if i == 0 || i > steps {
        return Err(Error::param(format!("iteration {i} outside 1..={steps}")));
    }
    let t = (i - 1) * total / steps + 1;
    let t_next = if i > 1 { (i - 2) * total / steps + 1 } else { 0 };
    Ok((t, t_next))
}

/// Implicit update: predict `J_0`, then re-noise it to level `t_next` with the same `ε̂`.
pub fn ddim_step(
    state: &Array3<f32>,
    t: usize,
    t_next: usize,
    eps_hat: &Array3<f32>,
    schedule: &NoiseSchedule,
) -> Result<Array3<f32>> {
    schedule.check_step(t)?;
    if t_next > schedule.steps() {
        return Err(Error::param(format!("t_next {t_next} beyond T")));
    }
    check_same_shape(state, eps_hat, "ddim noise estimate")?;
    if t_next == t {
        return Ok(state.clone());
    }
    let ab = schedule.alpha_bar(t);
    let ab_next = schedule.alpha_bar(t_next);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (s_next, n_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    Ok(Zip::from(state).and(eps_hat).map_collect(|&x, &e| {
        let (x, e) = (x as f64, e as f64);
        let clean = (x - n * e) / s;
        (s_next * clean + n_next * e) as f32
    }))
}

/// Ancestral update with an explicit noise draw (`None` means no noise).
pub fn ancestral_step_with_noise(
    state: &Array3<f32>,
    t: usize,
    eps_hat: &Array3<f32>,
    schedule: &NoiseSchedule,
    noise: Option<&Array3<f32>>,
) -> Result<Array3<f32>> {
    schedule.check_step(t)?;
    check_same_shape(state, eps_hat, "ancestral noise estimate")?;
    let (b, a, ab) = (schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t));
    let coef = b / (1.0 - ab).sqrt();
    let inv = 1.0 / a.sqrt();
    let mut mean = Zip::from(state)
        .and(eps_hat)
        .map_collect(|&x, &e| inv * (x as f64 - coef * e as f64));
    if let Some(z) = noise {
        check_same_shape(state, z, "ancestral injected noise")?;
        let sd = b.sqrt();
        Zip::from(&mut mean).and(z).for_each(|m, &z| *m += sd * z as f64);
    }
    Ok(mean.mapv(|v| v as f32))
}

/// `J_{t−1} ~ N(μ_θ(J_t, t), β_t·I)`; noise-free at `t = 1`.
pub fn ancestral_step(
    state: &Array3<f32>,
    t: usize,
    eps_hat: &Array3<f32>,
    schedule: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<Array3<f32>> {
    if t > 1 {
        let z = standard_normal_field(state.dim(), rng);
        ancestral_step_with_noise(state, t, eps_hat, schedule, Some(&z))
    } else {
        ancestral_step_with_noise(state, t, eps_hat, schedule, None)
    }
}

/// One row of the optional sampler trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub i: usize,
    pub t: usize,
    pub t_next: usize,
    pub state_mean: f64,
    pub state_std: f64,
}

fn moments(a: &Array3<f32>) -> (f64, f64) {
    let n = a.len() as f64;
    let mean = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the `S`-step implicit sampler from a given `J_T` and returns the raw,
/// unclamped final state.
pub fn sample_ddim_from(
    initial: Array3<f32>,
    condition: &Condition,
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Array3<f32>> {
    if initial.dim() != condition.state_dim() {
        return Err(Error::shape(format!(
            "initial state {:?} vs condition {:?}",
            initial.dim(),
            condition.state_dim()
        )));
    }
    let mut state = initial;
    for i in (1..=steps).rev() {
        let (t, t_next) = timestep_subsequence(schedule.steps(), steps, i)?;
        let eps = denoiser.predict_noise(&state, condition, t)?;
        state = ddim_step(&state, t, t_next, &eps, schedule)?;
        if let Some(rows) = trace.as_deref_mut() {
            let (state_mean, state_std) = moments(&state);
            rows.push(TraceRow {
                i,
                t,
                t_next,
                state_mean,
                state_std,
            });
        }
    }
    Ok(state)
}

/// Draws `J_T ~ N(0, I)` from `rng` and runs the implicit sampler, unclamped.
pub fn sample_ddim(
    condition: &Condition,
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut impl rand::Rng,
) -> Result<Array3<f32>> {
    // Validate before consuming randomness.
    timestep_subsequence(schedule.steps(), steps, steps)?;
    let initial = standard_normal_field(condition.state_dim(), rng);
    sample_ddim_from(initial, condition, denoiser, schedule, steps, None)
}

/// Conditional restoration: implicit sampling followed by a final clamp to `[0, 1]`.
pub fn restore(
    condition: &Condition,
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut impl rand::Rng,
) -> Result<ImageF> {
    state_to_image(&sample_ddim(condition, denoiser, schedule, steps, rng)?)
}

/// [`restore`] that also records per-iteration state statistics.
pub fn restore_traced(
    condition: &Condition,
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut impl rand::Rng,
) -> Result<(ImageF, Vec<TraceRow>)> {
    timestep_subsequence(schedule.steps(), steps, steps)?;
    let initial = standard_normal_field(condition.state_dim(), rng);
    let mut rows = Vec::with_capacity(steps);
    let state = sample_ddim_from(initial, condition, denoiser, schedule, steps, Some(&mut rows))?;
    Ok((state_to_image(&state)?, rows))
}

/// Restores several conditions at once, item `k` seeded by `seeds[k]`.
///
/// Produces exactly what `restore(conditions[k], .., rng_from_seed(seeds[k]))`
/// would, but lets the denoiser evaluate each timestep as one batch.
pub fn restore_batch(
    conditions: &[&Condition],
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    seeds: &[u64],
) -> Result<Vec<ImageF>> {
    if conditions.len() != seeds.len() {
        return Err(Error::shape("one seed per condition required"));
    }
    timestep_subsequence(schedule.steps(), steps, steps)?;
    let mut states: Vec<Array3<f32>> = conditions
        .iter()
        .zip(seeds)
        .map(|(c, &s)| standard_normal_field(c.state_dim(), &mut rng_from_seed(s)))
        .collect();
    for i in (1..=steps).rev() {
        let (t, t_next) = timestep_subsequence(schedule.steps(), steps, i)?;
        let eps = denoiser.predict_noise_batch(&states, conditions, t)?;
        states = states
            .iter()
            .zip(&eps)
            .map(|(s, e)| ddim_step(s, t, t_next, e, schedule))
            .collect::<Result<_>>()?;
    }
    states.iter().map(state_to_image).collect()
}

/// Full `T`-step ancestral chain, unclamped.
pub fn sample_ancestral(
    condition: &Condition,
    denoiser: &impl Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<Array3<f32>> {
    let mut state = standard_normal_field(condition.state_dim(), rng);
    for t in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict_noise(&state, condition, t)?;
        state = ancestral_step(&state, t, &eps, schedule, rng)?;
    }
    Ok(state)
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
