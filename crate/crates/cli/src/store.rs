//! On-disk layout of datasets and trained models.
//!
//! A dataset directory holds `train.jsonl` and `test.jsonl`, each with its
//! `*.manifest.json`. A model directory holds `model.json` (spec, training
//! config, dataset config, build id) and `params.bin`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sinc_core::layers::{check_params, LayerParams, ModelSpec};
use sinc_core::synth::{load_dataset, Dataset, DatasetConfig};
use sinc_core::train::TrainConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub train: Option<TrainConfig>,
    pub dataset: Option<DatasetConfig>,
    pub build_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (valid: train, test)")),
        }
    }
}

/// The split file inside a dataset directory, or `path` itself if it is a file.
pub fn split_path(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(split.file_name())
    } else {
        path.to_path_buf()
    }
}

pub fn load_split(path: &Path, split: Split) -> Result<Dataset> {
    let file = split_path(path, split);
    load_dataset(&file).with_context(|| format!("loading {}", file.display()))
}

pub fn save_model(dir: &Path, model: &ModelFile, params: &LayerParams) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(dir.join("model.json"), json + "\n")?;
    let mut w = BufWriter::new(File::create(dir.join("params.bin"))?);
    params.write_to(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<(ModelFile, LayerParams)> {
    let path = dir.join("model.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let model: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if model.format_version != MODEL_FORMAT_VERSION {
        bail!(
            "{}: unsupported format version {}",
            path.display(),
            model.format_version
        );
    }
    let ppath = dir.join("params.bin");
    let reader = BufReader::new(File::open(&ppath).with_context(|| format!("opening {}", ppath.display()))?);
    let params = LayerParams::read_from(reader).with_context(|| format!("reading {}", ppath.display()))?;
    check_params(&model.spec, &params).with_context(|| format!("{} does not match model.json", ppath.display()))?;
    Ok((model, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sinc_core::layers::{init_params, Encoding, ModelKind};
    use sinc_core::seeding::rng_for;

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(ModelKind::Gatv2, Encoding::OneHot { bound: 2 });
        let params = init_params(&spec, &mut rng_for(3, "init"));
        let model = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            spec,
            train: Some(TrainConfig::default()),
            dataset: None,
            build_id: "test".into(),
        };
        save_model(dir.path(), &model, &params).unwrap();
        let (m, p) = load_model(dir.path()).unwrap();
        assert_eq!((m, p), (model, params));
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let gcn = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        let model = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            spec: ModelSpec::new(ModelKind::SincGcn, Encoding::Scalar),
            train: None,
            dataset: None,
            build_id: "test".into(),
        };
        save_model(dir.path(), &model, &init_params(&gcn, &mut rng_for(0, "init"))).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
