use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cases::{case_recipe, CaseId};
use super::sources::{list_pngs, load_cropped, procedural_image, CleanSource};
use crate::degradation::{compose_mixed, AtmosphericLight, DegradationRecipe};
use crate::diffusion::Condition;
use crate::error::{Error, Result};
use crate::raster::{DegMask, ImageF};
use crate::seed::{derive_seed, stream};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub cases: Vec<CaseId>,
    pub count_per_case: usize,
    /// The last this-many samples of each case are held out from training.
    pub holdout_per_case: usize,
    pub size: usize,
    pub source: CleanSource,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cases: CaseId::ALL.to_vec(),
            count_per_case: 4,
            holdout_per_case: 1,
            size: 32,
            source: CleanSource::Procedural,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() || self.count_per_case == 0 || self.size == 0 {
            return Err(Error::param("synthesis needs at least one case, one sample and a positive size"));
        }
        if self.holdout_per_case > self.count_per_case {
            return Err(Error::param(format!(
                "holdout {} exceeds count {}",
                self.holdout_per_case, self.count_per_case
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

/// One synthesized sample. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub index: usize,
    pub case: CaseId,
    pub split: Split,
    pub clean: String,
    pub degraded: String,
    /// Per-degradation masks keyed by kind name.
    pub masks: IndexMap<String, String>,
    /// Union of all masks; the conditioning mask.
    pub union_mask: String,
    pub recipe: DegradationRecipe,
    pub atmospheric_light: AtmosphericLight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub samples: Vec<SampleRecord>,
    /// SHA-256 of every referenced file.
    pub digests: IndexMap<String, String>,
}

/// A sample read back into memory, as consumed by training and evaluation.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub index: usize,
    pub case: CaseId,
    pub clean: ImageF,
    pub condition: Condition,
    pub atmospheric_light: AtmosphericLight,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn sample_id(case: CaseId, k: usize) -> String {
    format!("c{}_{k:04}", case.number())
}

/// Writes clean/degraded images, masks, a sidecar JSON per sample and
/// `manifest.json` into `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sample_dir = out_dir.join("samples");
    std::fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let pngs = match &cfg.source {
        CleanSource::Procedural => Vec::new(),
        CleanSource::PngDir { path } => list_pngs(path)?,
    };
    let jobs: Vec<(usize, CaseId, usize)> = cfg
        .cases
        .iter()
        .enumerate()
        .flat_map(|(ci, &case)| (0..cfg.count_per_case).map(move |k| (ci * cfg.count_per_case + k, case, k)))
        .collect();

    let results: Vec<(SampleRecord, Vec<(String, String)>)> = jobs
        .par_iter()
        .map(|&(index, case, k)| {
            let clean = if pngs.is_empty() {
                procedural_image(index, cfg.size, derive_seed(derive_seed(seed, stream::CLEAN_SOURCE), index as u64))?
            } else {
                load_cropped(&pngs[index % pngs.len()], cfg.size)?
            };
            let recipe = case_recipe(case, derive_seed(derive_seed(seed, stream::SAMPLE), index as u64));
            let comp = compose_mixed(&clean, &recipe)?;
            let id = sample_id(case, k);
            let mut files = Vec::new();
            let mut write = |suffix: &str, save: &dyn Fn(&Path) -> Result<()>| -> Result<String> {
                let rel = format!("samples/{id}_{suffix}.png");
                let path = out_dir.join(&rel);
                save(&path)?;
                files.push((rel.clone(), sha256_file(&path)?));
                Ok(rel)
            };
            let clean_rel = write("clean", &|p| clean.save_png(p))?;
            let degraded_rel = write("degraded", &|p| comp.degraded.save_png(p))?;
            let mut masks = IndexMap::new();
            for (kind, m) in &comp.masks {
                masks.insert(kind.name().to_string(), write(&format!("mask_{}", kind.name()), &|p| m.save_png(p))?);
            }
            let union_rel = write("mask", &|p| comp.union_mask.save_png(p))?;
            let record = SampleRecord {
                id: id.clone(),
                index,
                case,
                split: if k + cfg.holdout_per_case >= cfg.count_per_case {
                    Split::Holdout
                } else {
                    Split::Train
                },
                clean: clean_rel,
                degraded: degraded_rel,
                masks,
                union_mask: union_rel,
                recipe,
                atmospheric_light: comp.atmospheric_light,
            };
            let sidecar = out_dir.join(format!("samples/{id}.json"));
            std::fs::write(&sidecar, serde_json::to_vec_pretty(&record)?).map_err(|e| Error::io(&sidecar, e))?;
            Ok((record, files))
        })
        .collect::<Result<_>>()?;

    let mut digests = IndexMap::new();
    let mut samples = Vec::with_capacity(results.len());
    for (record, files) in results {
        digests.extend(files);
        samples.push(record);
    }
    let manifest = DatasetManifest {
        seed,
        config: cfg.clone(),
        samples,
        digests,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    log::info!("synthesized {} samples into {}", manifest.samples.len(), out_dir.display());
    Ok(manifest)
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Directory that relative sample paths resolve against.
    pub fn root_of(path: &Path) -> PathBuf {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Every referenced file exists and matches its recorded digest.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for s in &self.samples {
            let files = [&s.clean, &s.degraded, &s.union_mask].into_iter().chain(s.masks.values());
            for rel in files {
                let want = self
                    .digests
                    .get(rel)
                    .ok_or_else(|| Error::state(format!("{rel} has no recorded digest")))?;
                let got = sha256_file(&root.join(rel))?;
                if &got != want {
                    return Err(Error::state(format!("{rel}: digest {got} does not match manifest {want}")));
                }
            }
        }
        Ok(())
    }

    pub fn load_sample(&self, root: &Path, record: &SampleRecord) -> Result<LoadedSample> {
        let clean = ImageF::load_png(&root.join(&record.clean))?;
        let degraded = ImageF::load_png(&root.join(&record.degraded))?;
        let mask = DegMask::load_png(&root.join(&record.union_mask))?;
        if clean.dims() != degraded.dims() {
            return Err(Error::shape(format!("{}: clean {:?} vs degraded {:?}", record.id, clean.dims(), degraded.dims())));
        }
        Ok(LoadedSample {
            id: record.id.clone(),
            index: record.index,
            case: record.case,
            clean,
            condition: Condition::new(degraded, mask)?,
            atmospheric_light: record.atmospheric_light,
        })
    }

    /// Samples of one split (or all), in manifest order.
    pub fn load_samples(&self, root: &Path, split: Option<Split>) -> Result<Vec<LoadedSample>> {
        self.samples
            .iter()
            .filter(|s| split.is_none_or(|want| s.split == want))
            .map(|s| self.load_sample(root, s))
            .collect()
    }
}
