use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::dataset::{sha256_file, sha256_hex, SynthConfig};
use super::train::{DiffusionTrainConfig, RefinerTrainConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, ConditionalUNet, DenoiserConfig, Refiner, RefinerConfig};

pub const DEFAULT_SAMPLING_STEPS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: NoiseSchedule::DEFAULT_STEPS,
            beta_start: NoiseSchedule::DEFAULT_BETA_START,
            beta_end: NoiseSchedule::DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Everything needed to rerun the pipeline, read from one TOML or JSON file.
/// Missing fields take their defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub diffusion_training: DiffusionTrainConfig,
    pub refiner: RefinerConfig,
    pub refiner_training: RefinerTrainConfig,
    pub sampling_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            diffusion_training: DiffusionTrainConfig::default(),
            refiner: RefinerConfig::default(),
            refiner_training: RefinerTrainConfig::default(),
            sampling_steps: DEFAULT_SAMPLING_STEPS,
        }
    }
}

impl ExperimentConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults) and applies `key.path=value` overrides.
    /// Values are parsed as TOML, falling back to a bare string.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
                    serde_json::from_str::<toml::Table>(&text)?
                } else {
                    toml::from_str::<toml::Table>(&text)?
                }
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.schedule.build()?;
        self.denoiser.validate()?;
        self.refiner.validate()?;
        self.diffusion_training.adam.validate()?;
        self.refiner_training.adam.validate()?;
        self.refiner_training.weights.validate()?;
        if self.sampling_steps == 0 || self.sampling_steps > self.schedule.steps {
            return Err(Error::param(format!(
                "sampling steps {} outside 1..={}",
                self.sampling_steps, self.schedule.steps
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<()> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::param(format!("override {text:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::param(format!("override {text:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::param(format!("override {text:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one pipeline stage: the config snapshot, digests of the files it
/// read and wrote, and a hash identifying its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub stage: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub inputs: IndexMap<String, FileDigest>,
    pub outputs: IndexMap<String, FileDigest>,
    /// SHA-256 over the config digest and the input digests, in order.
    pub content_hash: String,
}

impl ExperimentManifest {
    pub fn new(stage: &str, config: &ExperimentConfig, inputs: &[(&str, &Path)]) -> Result<Self> {
        let mut map = IndexMap::new();
        for (k, p) in inputs {
            map.insert(k.to_string(), FileDigest::of(p)?);
        }
        let mut hashed = config.digest()?;
        for (k, d) in &map {
            hashed.push_str(&format!("\n{k}:{}", d.sha256));
        }
        Ok(Self {
            stage: stage.to_string(),
            config: config.clone(),
            seed: config.seed,
            inputs: map,
            outputs: IndexMap::new(),
            content_hash: sha256_hex(hashed.as_bytes()),
        })
    }

    pub fn add_output(&mut self, key: &str, path: &Path) -> Result<()> {
        self.outputs.insert(key.to_string(), FileDigest::of(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Serialize, Deserialize)]
struct DenoiserMeta {
    kind: String,
    config: DenoiserConfig,
    schedule: ScheduleConfig,
}

#[derive(Serialize, Deserialize)]
struct RefinerMeta {
    kind: String,
    config: RefinerConfig,
}

/// Saves the denoiser with its architecture and the schedule it was trained on.
pub fn save_denoiser(path: &Path, net: &ConditionalUNet<f32>, schedule: &ScheduleConfig) -> Result<()> {
    let meta = DenoiserMeta {
        kind: "denoiser".into(),
        config: *net.config(),
        schedule: *schedule,
    };
    save_checkpoint(path, &net.params, serde_json::to_value(meta)?)
}

pub fn load_denoiser(path: &Path) -> Result<(ConditionalUNet<f32>, ScheduleConfig)> {
    let (params, meta) = load_checkpoint(path)?;
    let meta: DenoiserMeta = serde_json::from_value(meta)?;
    if meta.kind != "denoiser" {
        return Err(Error::param(format!("{} holds a {}, not a denoiser", path.display(), meta.kind)));
    }
    Ok((ConditionalUNet::from_params(meta.config, params)?, meta.schedule))
}

pub fn save_refiner(path: &Path, net: &Refiner<f32>) -> Result<()> {
    let meta = RefinerMeta {
        kind: "refiner".into(),
        config: *net.config(),
    };
    save_checkpoint(path, &net.params, serde_json::to_value(meta)?)
}

pub fn load_refiner(path: &Path) -> Result<Refiner<f32>> {
    let (params, meta) = load_checkpoint(path)?;
    let meta: RefinerMeta = serde_json::from_value(meta)?;
    if meta.kind != "refiner" {
        return Err(Error::param(format!("{} holds a {}, not a refiner", path.display(), meta.kind)));
    }
    Refiner::from_params(meta.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, UebMasks};
    use crate::seed::rng_from_seed;

    #[test]
    fn config_files_parse_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("e.toml");
        std::fs::write(&toml_path, "seed = 7\nsampling_steps = 10\n[denoiser]\nbase_channels = 8\n").unwrap();
        let cfg = ExperimentConfig::load(&toml_path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.denoiser.base_channels, 8);
        assert_eq!(cfg.denoiser.depth, DenoiserConfig::default().depth);
        assert_eq!(cfg.diffusion_training.adam.lr, 3e-5);

        let json_path = dir.path().join("e.json");
        std::fs::write(&json_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&json_path).unwrap(), cfg);

        std::fs::write(&toml_path, "seeed = 7\n").unwrap();
        assert!(ExperimentConfig::load(&toml_path).is_err());
        std::fs::write(&toml_path, "sampling_steps = 0\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&toml_path), Err(Error::Param(_))));
    }

    #[test]
    fn overrides_apply_on_top_of_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.toml");
        std::fs::write(&p, "seed = 7\n[denoiser]\nbase_channels = 8\n").unwrap();
        let sets = vec![
            "denoiser.base_channels=16".to_string(),
            "diffusion_training.adam.lr = 1e-3".to_string(),
            "synth.source.kind=procedural".to_string(),
        ];
        let cfg = ExperimentConfig::load_with_overrides(Some(&p), &sets).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.denoiser.base_channels, 16);
        assert_eq!(cfg.diffusion_training.adam.lr, 1e-3);
        assert_eq!(ExperimentConfig::load_with_overrides(None, &[]).unwrap(), ExperimentConfig::default());
        assert!(ExperimentConfig::load_with_overrides(None, &["seed".into()]).is_err());
        assert!(ExperimentConfig::load_with_overrides(None, &["seed.x=1".into()]).is_err());
        assert!(ExperimentConfig::load_with_overrides(None, &["seed=\"x\"".into()]).is_err());
    }

    #[test]
    fn manifest_hash_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("in.bin");
        std::fs::write(&f, b"abc").unwrap();
        let cfg = ExperimentConfig::default();
        let a = ExperimentManifest::new("x", &cfg, &[("data", &f)]).unwrap();
        assert_eq!(a, ExperimentManifest::new("x", &cfg, &[("data", &f)]).unwrap());
        std::fs::write(&f, b"abd").unwrap();
        let b = ExperimentManifest::new("x", &cfg, &[("data", &f)]).unwrap();
        assert_ne!(a.content_hash, b.content_hash);
        let other = ExperimentConfig { seed: 1, ..cfg };
        assert_ne!(b.content_hash, ExperimentManifest::new("x", &other, &[("data", &f)]).unwrap().content_hash);
    }

    #[test]
    fn checkpoints_round_trip_with_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let dcfg = DenoiserConfig {
            base_channels: 4,
            time_embed_dim: 8,
            ..Default::default()
        };
        let d = ConditionalUNet::<f32>::new(dcfg, &mut rng_from_seed(3)).unwrap();
        let p = dir.path().join("d.ckpt");
        save_denoiser(&p, &d, &ScheduleConfig::default()).unwrap();
        let (d2, s) = load_denoiser(&p).unwrap();
        assert_eq!(s, ScheduleConfig::default());
        assert_eq!(d2.config(), d.config());
        for (name, v) in d.params.iter() {
            assert_eq!(d2.params.value(name).unwrap(), v);
        }
        assert!(load_refiner(&p).is_err());

        let rcfg = RefinerConfig {
            base_channels: 4,
            ..Default::default()
        };
        let r = Refiner::<f32>::new(rcfg, &mut rng_from_seed(4)).unwrap();
        let rp = dir.path().join("r.ckpt");
        save_refiner(&rp, &r).unwrap();
        let r2 = load_refiner(&rp).unwrap();
        let x = ndarray::Array4::from_shape_fn((1, 3, 8, 8), |(_, c, y, x)| ((c + y * x) % 7) as f32 / 7.0);
        let masks: Vec<UebMasks> = r.draw_masks(&mut rng_from_seed(5));
        let run = |net: &Refiner<f32>| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let out = net.forward(&mut g, v, &masks).unwrap();
            g.value(out.refined).clone()
        };
        assert_eq!(run(&r), run(&r2));
    }
}
