use ndarray::Array4;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::LoadedSample;
use crate::diffusion::{image_to_state, make_training_example, restore_batch, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{
    condition_batch, image_batch, stack_states, AdamConfig, ConditionalUNet, DenoiserConfig, Graph, Refiner,
    RefinerConfig, UebMasks, Var,
};
use crate::objectives::{au_loss, diffusion_loss, rec_loss, total_loss, un_loss, LossWeights};
use crate::raster::ImageF;
use crate::seed::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub log_every: usize,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 8,
            adam: AdamConfig::default(),
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub log_every: usize,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLogRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinerLogRow {
    pub step: usize,
    pub total: f64,
    pub rec: f64,
    pub un: f64,
    pub grad_norm: f64,
}

fn check_batch(steps: usize, batch: usize, n: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    if steps > 0 && n == 0 {
        return Err(Error::param("no training samples"));
    }
    Ok(())
}

fn non_finite(step: usize, what: &str, value: f64, g: &Graph<f32>) -> Error {
    let origin = match g.non_finite() {
        Some((idx, op)) => format!("; first non-finite value produced by {op} (node {idx})"),
        None => String::new(),
    };
    Error::Numeric(format!("{what} is {value} at step {step}{origin}"))
}

/// Noise-prediction training with Adam. Returns the network and one log row per step.
pub fn train_denoiser(
    samples: &[LoadedSample],
    schedule: &NoiseSchedule,
    net_cfg: DenoiserConfig,
    cfg: &DiffusionTrainConfig,
    seed: u64,
) -> Result<(ConditionalUNet<f32>, Vec<DiffusionLogRow>)> {
    check_batch(cfg.steps, cfg.batch_size, samples.len())?;
    cfg.adam.validate()?;
    let mut net = ConditionalUNet::<f32>::new(net_cfg, &mut rng_from_seed(derive_seed(seed, stream::INIT)))?;
    let clean: Vec<_> = samples.iter().map(|s| image_to_state(&s.clean)).collect();
    let mut rng = rng_from_seed(derive_seed(seed, stream::TRAIN_DIFFUSION));
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut noisy = Vec::with_capacity(cfg.batch_size);
        let mut target = Vec::with_capacity(cfg.batch_size);
        let mut conds = Vec::with_capacity(cfg.batch_size);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let k = rng.random_range(0..samples.len());
            let ex = make_training_example(&clean[k], samples[k].condition.clone(), schedule, &mut rng)?;
            noisy.push(ex.noisy);
            target.push(ex.target_noise);
            conds.push(&samples[k].condition);
            ts.push(ex.timestep);
        }
        let mut g = Graph::new();
        let x = g.constant(stack_states(&noisy.iter().collect::<Vec<_>>())?);
        let c = g.constant(condition_batch(&conds)?);
        let eps = g.constant(stack_states(&target.iter().collect::<Vec<_>>())?);
        let pred = net.forward(&mut g, x, c, &ts)?;
        let loss = diffusion_loss(&mut g, pred, eps)?;
        let value = g.scalar(loss) as f64;
        if !value.is_finite() {
            return Err(non_finite(step, "diffusion loss", value, &g));
        }
        let grads = g.backward(loss)?;
        net.params.accumulate(&g, &grads)?;
        let grad_norm = net.params.grad_norm();
        net.params.adam_step(&cfg.adam)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("denoiser step {step}: loss {value:.5}");
        }
        log.push(DiffusionLogRow {
            step,
            loss: value,
            grad_norm,
        });
    }
    Ok((net, log))
}

/// Coarse restorations of `samples`, each seeded from the sample's index so
/// the result does not depend on batching or ordering.
pub fn coarse_restorations(
    denoiser: &ConditionalUNet<f32>,
    schedule: &NoiseSchedule,
    samples: &[LoadedSample],
    steps: usize,
    seed: u64,
) -> Result<Vec<ImageF>> {
    let base = derive_seed(seed, stream::COARSE);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let conds: Vec<_> = chunk.iter().map(|s| &s.condition).collect();
        let seeds: Vec<_> = chunk.iter().map(|s| derive_seed(base, s.index as u64)).collect();
        out.extend(restore_batch(&conds, denoiser, schedule, steps, &seeds)?);
    }
    Ok(out)
}

/// Handles of the refiner objective's terms.
#[derive(Debug, Clone, Copy)]
pub struct RefinerObjective {
    pub total: Var,
    pub rec: Var,
    pub un: Var,
}

/// `L_rec(J, J_f) + λ·Σ_scales [L1(J, J_a) + L_au(I, J_a, U_A)]`, with the clean
/// and degraded images average-pooled to each scale's resolution.
pub fn refiner_objective(
    g: &mut Graph<f32>,
    refiner: &Refiner<f32>,
    coarse: Var,
    clean: Var,
    degraded: Var,
    masks: &[UebMasks],
    weights: &LossWeights,
) -> Result<RefinerObjective> {
    let out = refiner.forward(g, coarse, masks)?;
    let rec = rec_loss(g, clean, out.refined, weights.rec_norm)?;
    let (mut j, mut i) = (clean, degraded);
    let mut un = None;
    for (l, scale) in out.scales.iter().enumerate() {
        if l > 0 {
            j = g.avg_pool2(j)?;
            i = g.avg_pool2(i)?;
        }
        let au = au_loss(g, i, scale.j_a, scale.u_a, weights)?;
        let term = un_loss(g, j, scale.j_a, au)?;
        un = Some(match un {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let un = un.expect("refiner has at least one scale");
    let total = total_loss(g, rec, un, weights.lambda)?;
    Ok(RefinerObjective { total, rec, un })
}

fn gather<'a>(idx: &[usize], f: impl Fn(usize) -> &'a ImageF) -> Array4<f32> {
    image_batch(&idx.iter().map(|&k| f(k)).collect::<Vec<_>>())
}

/// Trains the refiner on fixed coarse restorations of `samples`.
pub fn train_refiner(
    samples: &[LoadedSample],
    coarse: &[ImageF],
    refiner_cfg: RefinerConfig,
    cfg: &RefinerTrainConfig,
    seed: u64,
) -> Result<(Refiner<f32>, Vec<RefinerLogRow>)> {
    check_batch(cfg.steps, cfg.batch_size, samples.len())?;
    if coarse.len() != samples.len() {
        return Err(Error::shape(format!("{} coarse images for {} samples", coarse.len(), samples.len())));
    }
    cfg.adam.validate()?;
    cfg.weights.validate()?;
    let mut init = rng_from_seed(derive_seed(derive_seed(seed, stream::INIT), 1));
    let mut refiner = Refiner::<f32>::new(refiner_cfg, &mut init)?;
    let mut rng = rng_from_seed(derive_seed(seed, stream::TRAIN_REFINER));
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..samples.len())).collect();
        let masks = refiner.draw_masks(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(gather(&idx, |k| &coarse[k]));
        let j = g.constant(gather(&idx, |k| &samples[k].clean));
        let i = g.constant(gather(&idx, |k| &samples[k].condition.degraded));
        let obj = refiner_objective(&mut g, &refiner, x, j, i, &masks, &cfg.weights)?;
        let total = g.scalar(obj.total) as f64;
        if !total.is_finite() {
            return Err(non_finite(step, "refiner loss", total, &g));
        }
        let grads = g.backward(obj.total)?;
        refiner.params.accumulate(&g, &grads)?;
        let row = RefinerLogRow {
            step,
            total,
            rec: g.scalar(obj.rec) as f64,
            un: g.scalar(obj.un) as f64,
            grad_norm: refiner.params.grad_norm(),
        };
        refiner.params.adam_step(&cfg.adam)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("refiner step {step}: total {:.5} rec {:.5} un {:.5}", row.total, row.rec, row.un);
        }
        log.push(row);
    }
    Ok((refiner, log))
}

pub fn write_log_csv<R: Serialize>(path: &std::path::Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
