use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cases::CaseId;
use super::dataset::LoadedSample;
use super::restore::{refine_coarse, restore_seeds};
use crate::diffusion::{restore_batch, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{ConditionalUNet, Refiner};
use crate::objectives::{psnr, ssim};
use crate::raster::ImageF;
use crate::seed::{derive_seed, stream};

/// Coarse and refined outputs for one sample.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub coarse: ImageF,
    pub refined: ImageF,
}

/// Anything that maps a sample and a seed to a restoration.
pub trait Pipeline: Sync {
    fn run(&self, samples: &[&LoadedSample], seeds: &[u64]) -> Result<Vec<PipelineOutput>>;
}

/// Returns the clean image for both stages; the evaluation upper bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPipeline;

impl Pipeline for IdentityPipeline {
    fn run(&self, samples: &[&LoadedSample], _seeds: &[u64]) -> Result<Vec<PipelineOutput>> {
        Ok(samples
            .iter()
            .map(|s| PipelineOutput {
                coarse: s.clean.clone(),
                refined: s.clean.clone(),
            })
            .collect())
    }
}

/// Implicit sampling with the trained denoiser, conditioned on the recorded
/// masks, followed by the refiner when present.
pub struct DiffusionPipeline<'a> {
    pub denoiser: &'a ConditionalUNet<f32>,
    pub refiner: Option<&'a Refiner<f32>>,
    pub schedule: &'a NoiseSchedule,
    pub steps: usize,
}

impl Pipeline for DiffusionPipeline<'_> {
    fn run(&self, samples: &[&LoadedSample], seeds: &[u64]) -> Result<Vec<PipelineOutput>> {
        let conds: Vec<_> = samples.iter().map(|s| &s.condition).collect();
        let (sample_seeds, refine_seeds): (Vec<u64>, Vec<u64>) = seeds.iter().map(|&s| restore_seeds(s)).unzip();
        let coarse = restore_batch(&conds, self.denoiser, self.schedule, self.steps, &sample_seeds)?;
        // The refiner sees exactly the coarse image that is scored on its own.
        coarse
            .into_iter()
            .zip(refine_seeds)
            .map(|(c, rs)| {
                let out = refine_coarse(c, self.refiner, rs)?;
                Ok(PipelineOutput {
                    coarse: out.coarse,
                    refined: out.refined,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub case_id: CaseId,
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_db_wo_refine: f64,
    pub ssim_wo_refine: f64,
    pub psnr_db_input: f64,
    pub ssim_input: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAggregate {
    pub count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_db_wo_refine: f64,
    pub ssim_wo_refine: f64,
    pub psnr_db_input: f64,
    pub ssim_input: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Keyed by case number, ascending.
    pub per_case: IndexMap<String, CaseAggregate>,
}

/// Seed of sample `index` in an evaluation run.
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::EVAL), index as u64)
}

const CHUNK: usize = 8;

/// Restores and scores every sample. Rows follow the order of `samples`.
pub fn evaluate(pipeline: &dyn Pipeline, samples: &[LoadedSample], seed: u64) -> Result<MetricReport> {
    let chunks: Vec<&[LoadedSample]> = samples.chunks(CHUNK).collect();
    let rows: Vec<Vec<MetricRow>> = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<_> = chunk.iter().collect();
            let seeds: Vec<_> = chunk.iter().map(|s| eval_seed(seed, s.index)).collect();
            let outs = pipeline.run(&refs, &seeds)?;
            if outs.len() != chunk.len() {
                return Err(Error::state(format!("pipeline returned {} outputs for {}", outs.len(), chunk.len())));
            }
            chunk.iter().zip(outs).map(|(s, o)| score(s, &o)).collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MetricRow> = rows.into_iter().flatten().collect();
    Ok(MetricReport {
        per_case: aggregate(&rows),
        rows,
    })
}

fn score(s: &LoadedSample, o: &PipelineOutput) -> Result<MetricRow> {
    let input = &s.condition.degraded;
    Ok(MetricRow {
        sample_id: s.id.clone(),
        case_id: s.case,
        psnr_db: psnr(&s.clean, &o.refined)?,
        ssim: ssim(&s.clean, &o.refined)?,
        psnr_db_wo_refine: psnr(&s.clean, &o.coarse)?,
        ssim_wo_refine: ssim(&s.clean, &o.coarse)?,
        psnr_db_input: psnr(&s.clean, input)?,
        ssim_input: ssim(&s.clean, input)?,
    })
}

pub fn aggregate(rows: &[MetricRow]) -> IndexMap<String, CaseAggregate> {
    let mut out = IndexMap::new();
    for case in CaseId::ALL {
        let rs: Vec<_> = rows.iter().filter(|r| r.case_id == case).collect();
        if rs.is_empty() {
            continue;
        }
        let mean = |f: fn(&MetricRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
        out.insert(
            case.to_string(),
            CaseAggregate {
                count: rs.len(),
                psnr_db: mean(|r| r.psnr_db),
                ssim: mean(|r| r.ssim),
                psnr_db_wo_refine: mean(|r| r.psnr_db_wo_refine),
                ssim_wo_refine: mean(|r| r.ssim_wo_refine),
                psnr_db_input: mean(|r| r.psnr_db_input),
                ssim_input: mean(|r| r.ssim_input),
            },
        );
    }
    out
}

impl MetricReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows: Vec<MetricRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            per_case: aggregate(&rows),
            rows,
        })
    }

    pub fn write_aggregate_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.per_case)?).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width per-case table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<5} {:>5} {:>10} {:>8} {:>10} {:>8} {:>10} {:>8}\n",
            "case", "n", "psnr", "ssim", "psnr_wo", "ssim_wo", "psnr_in", "ssim_in"
        );
        for (case, a) in &self.per_case {
            s.push_str(&format!(
                "{:<5} {:>5} {:>10.3} {:>8.4} {:>10.3} {:>8.4} {:>10.3} {:>8.4}\n",
                case, a.count, a.psnr_db, a.ssim, a.psnr_db_wo_refine, a.ssim_wo_refine, a.psnr_db_input, a.ssim_input
            ));
        }
        s
    }
}
