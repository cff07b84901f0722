//! Directory-based file formats.
//!
//! Every directory holds `manifest.json` (UTF-8 JSON) plus raw blobs with no
//! headers: little-endian `f32` or `f64` in row-major order, or little-endian
//! `u32` for labels. Manifest fields:
//!
//! | field           | kinds                | meaning                                   |
//! |-----------------|----------------------|-------------------------------------------|
//! | `version`       | all                  | format version, currently `1`             |
//! | `kind`          | all                  | `"dataset"`, `"prompts"` or `"checkpoint"` |
//! | `class_names`   | all                  | ordered class list, `K` entries           |
//! | `domain`        | dataset              | domain tag                                |
//! | `num_samples`   | dataset              | row count `N`                             |
//! | `dim_input`     | dataset              | model input width                         |
//! | `dim_clip`      | dataset, prompts     | CLIP embedding width                      |
//! | `source_domain` | prompts              | domain named in the source prompts        |
//! | `target_domain` | prompts              | domain named in the target prompts        |
//! | `layer_dims`    | checkpoint           | `[d_in, hidden.., d_feat]`                |
//! | `activation`    | checkpoint           | feature-extractor nonlinearity            |
//! | `preprocessing` | any (optional)       | free-form note from the exporter          |
//! | `blobs`         | all                  | name -> `{file, dtype, rows, cols, bytes}` |
//!
//! Blob names: datasets use `inputs`, `clip` and optionally `labels` /
//! `eval_labels`; prompt banks use `source`, `target`, `agnostic`; checkpoints
//! use `params`. The averaged prompt set is never stored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::model::{Activation, UdaModel};
use crate::numerics::Mat;
use crate::prompt_bank::{check_class_names, PromptBank};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Dataset,
    Prompts,
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U32,
}

impl DType {
    pub fn size(self) -> u64 {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub file: String,
    pub dtype: DType,
    pub rows: usize,
    pub cols: usize,
    pub bytes: u64,
}

impl BlobSpec {
    fn new(file: &str, dtype: DType, rows: usize, cols: usize) -> Self {
        BlobSpec {
            file: file.to_string(),
            dtype,
            rows,
            cols,
            bytes: (rows * cols) as u64 * dtype.size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub kind: ManifestKind,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_input: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_clip: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<String>,
    pub blobs: BTreeMap<String, BlobSpec>,
}

fn required(value: Option<usize>, field: &str, path: &Path) -> Result<usize> {
    match value {
        Some(0) => Err(Error::format(path, None, format!("`{field}` must be at least 1"))),
        Some(v) => Ok(v),
        None => Err(Error::format(path, None, format!("missing `{field}`"))),
    }
}

impl Manifest {
    /// Checks internal consistency without touching any blob.
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                None,
                format!("unsupported version {} (expected {FORMAT_VERSION})", self.version),
            ));
        }
        check_class_names(&self.class_names).map_err(|e| Error::format(path, None, e.to_string()))?;
        let k = self.class_names.len();

        for (name, blob) in &self.blobs {
            let plain =
                !blob.file.is_empty() && blob.file != "." && blob.file != ".." && !blob.file.contains(['/', '\\']);
            if !plain {
                return Err(Error::format(
                    path,
                    None,
                    format!("blob `{name}` has invalid file name `{}`", blob.file),
                ));
            }
            let expected = (blob.rows as u64)
                .checked_mul(blob.cols as u64)
                .and_then(|n| n.checked_mul(blob.dtype.size()));
            if expected != Some(blob.bytes) {
                return Err(Error::format(
                    path,
                    None,
                    format!(
                        "blob `{name}` declares {} bytes but {}x{} {:?} needs {:?}",
                        blob.bytes, blob.rows, blob.cols, blob.dtype, expected
                    ),
                ));
            }
        }

        let expect = |name: &str, dtype: DType, rows: usize, cols: usize, optional: bool| -> Result<()> {
            match self.blobs.get(name) {
                None if optional => Ok(()),
                None => Err(Error::format(path, None, format!("missing blob `{name}`"))),
                Some(b) if b.dtype != dtype || b.rows != rows || b.cols != cols => Err(Error::format(
                    path,
                    None,
                    format!(
                        "blob `{name}` is {}x{} {:?}, expected {rows}x{cols} {dtype:?}",
                        b.rows, b.cols, b.dtype
                    ),
                )),
                Some(_) => Ok(()),
            }
        };
        let allow_only = |names: &[&str]| -> Result<()> {
            match self.blobs.keys().find(|k| !names.contains(&k.as_str())) {
                Some(extra) => Err(Error::format(path, None, format!("unexpected blob `{extra}`"))),
                None => Ok(()),
            }
        };

        match self.kind {
            ManifestKind::Dataset => {
                let n = required(self.num_samples, "num_samples", path)?;
                let d_in = required(self.dim_input, "dim_input", path)?;
                let d_clip = required(self.dim_clip, "dim_clip", path)?;
                allow_only(&["inputs", "clip", "labels", "eval_labels"])?;
                expect("inputs", DType::F32, n, d_in, false)?;
                expect("clip", DType::F32, n, d_clip, false)?;
                expect("labels", DType::U32, n, 1, true)?;
                expect("eval_labels", DType::U32, n, 1, true)?;
            }
            ManifestKind::Prompts => {
                let d_clip = required(self.dim_clip, "dim_clip", path)?;
                allow_only(&["source", "target", "agnostic"])?;
                for name in ["source", "target", "agnostic"] {
                    expect(name, DType::F32, k, d_clip, false)?;
                }
            }
            ManifestKind::Checkpoint => {
                let dims = self
                    .layer_dims
                    .as_ref()
                    .ok_or_else(|| Error::format(path, None, "missing `layer_dims`"))?;
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(Error::format(path, None, format!("invalid layer_dims {dims:?}")));
                }
                if let Some(act) = &self.activation {
                    act.parse::<Activation>()
                        .map_err(|e| Error::format(path, None, e.to_string()))?;
                }
                allow_only(&["params"])?;
                expect("params", DType::F64, UdaModel::param_count_for(dims, k), 1, false)?;
            }
        }
        Ok(())
    }
}

/// Reads and validates `manifest.json` from `dir`.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    manifest.validate(&path)?;
    Ok(manifest)
}

fn expect_kind(manifest: &Manifest, kind: ManifestKind, dir: &Path) -> Result<()> {
    if manifest.kind != kind {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            None,
            format!("expected a {kind:?} manifest, found {:?}", manifest.kind),
        ));
    }
    Ok(())
}

fn read_blob_bytes(dir: &Path, name: &str, blob: &BlobSpec) -> Result<Vec<u8>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != blob.bytes {
        return Err(Error::format(
            &path,
            Some(bytes.len() as u64),
            format!(
                "blob `{name}` has {} bytes, manifest declares {}",
                bytes.len(),
                blob.bytes
            ),
        ));
    }
    Ok(bytes)
}

fn read_f32_mat(dir: &Path, manifest: &Manifest, name: &str) -> Result<Mat> {
    let blob = &manifest.blobs[name];
    let bytes = read_blob_bytes(dir, name, blob)?;
    let mut values = Vec::with_capacity(blob.rows * blob.cols);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                dir.join(&blob.file),
                Some(4 * i as u64),
                format!("non-finite value in blob `{name}`"),
            ));
        }
        values.push(v as f64);
    }
    Ok(Mat::from_shape_vec((blob.rows, blob.cols), values).expect("blob shape validated"))
}

fn read_labels(dir: &Path, manifest: &Manifest, name: &str) -> Result<Option<Vec<usize>>> {
    let Some(blob) = manifest.blobs.get(name) else {
        return Ok(None);
    };
    let k = manifest.class_names.len();
    let bytes = read_blob_bytes(dir, name, blob)?;
    let mut labels = Vec::with_capacity(blob.rows);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if v >= k {
            return Err(Error::format(
                dir.join(&blob.file),
                Some(4 * i as u64),
                format!("label {v} out of range for {k} classes"),
            ));
        }
        labels.push(v);
    }
    Ok(Some(labels))
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn write_f32_mat(dir: &Path, file: &str, m: &Mat) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for row in m.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_file(dir.join(file), &bytes)
}

fn write_u32(dir: &Path, file: &str, labels: &[usize]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
    write_file(dir.join(file), &bytes)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    manifest.validate(&path)?;
    let mut text = serde_json::to_string_pretty(manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn empty_manifest(kind: ManifestKind, class_names: &[String]) -> Manifest {
    Manifest {
        version: FORMAT_VERSION,
        kind,
        class_names: class_names.to_vec(),
        domain: None,
        num_samples: None,
        dim_input: None,
        dim_clip: None,
        source_domain: None,
        target_domain: None,
        layer_dims: None,
        activation: None,
        preprocessing: None,
        blobs: BTreeMap::new(),
    }
}

pub fn write_dataset(dir: &Path, ds: &EmbeddingDataset) -> Result<()> {
    ds.validate()?;
    let clip = ds.clip()?;
    let n = ds.len();
    let mut m = empty_manifest(ManifestKind::Dataset, &ds.class_names);
    m.domain = Some(ds.domain_name.clone());
    m.num_samples = Some(n);
    m.dim_input = Some(ds.dim_input());
    m.dim_clip = Some(clip.ncols());
    m.blobs.insert(
        "inputs".into(),
        BlobSpec::new("inputs.f32", DType::F32, n, ds.dim_input()),
    );
    m.blobs
        .insert("clip".into(), BlobSpec::new("clip.f32", DType::F32, n, clip.ncols()));
    if ds.labels.is_some() {
        m.blobs
            .insert("labels".into(), BlobSpec::new("labels.u32", DType::U32, n, 1));
    }
    if ds.eval_labels.is_some() {
        m.blobs
            .insert("eval_labels".into(), BlobSpec::new("eval_labels.u32", DType::U32, n, 1));
    }
    // validate before creating anything on disk
    m.validate(&dir.join(MANIFEST_FILE))?;

    create_dir(dir)?;
    write_f32_mat(dir, "inputs.f32", &ds.inputs)?;
    write_f32_mat(dir, "clip.f32", clip)?;
    if let Some(labels) = &ds.labels {
        write_u32(dir, "labels.u32", labels)?;
    }
    if let Some(labels) = &ds.eval_labels {
        write_u32(dir, "eval_labels.u32", labels)?;
    }
    write_manifest(dir, &m)
}

pub fn read_dataset(dir: &Path) -> Result<EmbeddingDataset> {
    let m = read_manifest(dir)?;
    expect_kind(&m, ManifestKind::Dataset, dir)?;
    let inputs = read_f32_mat(dir, &m, "inputs")?;
    let clip = read_f32_mat(dir, &m, "clip")?;
    let labels = read_labels(dir, &m, "labels")?;
    let eval_labels = read_labels(dir, &m, "eval_labels")?;
    EmbeddingDataset::new(
        m.domain.clone().unwrap_or_default(),
        m.class_names,
        inputs,
        Some(clip),
        labels,
        eval_labels,
    )
}

pub fn write_prompts(dir: &Path, bank: &PromptBank) -> Result<()> {
    let k = bank.num_classes();
    let d = bank.dim_clip();
    let mut m = empty_manifest(ManifestKind::Prompts, bank.class_names());
    m.dim_clip = Some(d);
    m.source_domain = bank.source_domain().map(str::to_string);
    m.target_domain = bank.target_domain().map(str::to_string);
    for name in ["source", "target", "agnostic"] {
        m.blobs
            .insert(name.into(), BlobSpec::new(&format!("{name}.f32"), DType::F32, k, d));
    }
    m.validate(&dir.join(MANIFEST_FILE))?;

    create_dir(dir)?;
    write_f32_mat(dir, "source.f32", bank.source_text())?;
    write_f32_mat(dir, "target.f32", bank.target_text())?;
    write_f32_mat(dir, "agnostic.f32", bank.agnostic_text())?;
    write_manifest(dir, &m)
}

/// Loads a prompt bank; the averaged set is recomputed from source and target.
pub fn read_prompts(dir: &Path) -> Result<PromptBank> {
    let m = read_manifest(dir)?;
    expect_kind(&m, ManifestKind::Prompts, dir)?;
    let source = read_f32_mat(dir, &m, "source")?;
    let target = read_f32_mat(dir, &m, "target")?;
    let agnostic = read_f32_mat(dir, &m, "agnostic")?;
    let bank = PromptBank::new(m.class_names, source, target, agnostic)?;
    Ok(match (m.source_domain, m.target_domain) {
        (Some(s), Some(t)) => bank.with_domains(s, t),
        _ => bank,
    })
}

/// Writes model parameters as one `f64` blob, in [`UdaModel::params_flat`] order.
pub fn write_checkpoint(dir: &Path, model: &UdaModel, class_names: &[String]) -> Result<()> {
    if class_names.len() != model.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes but {} class names were given",
            model.num_classes(),
            class_names.len()
        )));
    }
    let params = model.params_flat();
    let mut m = empty_manifest(ManifestKind::Checkpoint, class_names);
    m.layer_dims = Some(model.layer_dims().to_vec());
    m.activation = Some(model.activation().to_string());
    m.blobs.insert(
        "params".into(),
        BlobSpec::new("params.f64", DType::F64, params.len(), 1),
    );
    m.validate(&dir.join(MANIFEST_FILE))?;

    create_dir(dir)?;
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(dir.join("params.f64"), &bytes)?;
    write_manifest(dir, &m)
}

/// Returns the model and the class names it was trained on.
pub fn read_checkpoint(dir: &Path) -> Result<(UdaModel, Vec<String>)> {
    let m = read_manifest(dir)?;
    expect_kind(&m, ManifestKind::Checkpoint, dir)?;
    let blob = &m.blobs["params"];
    let bytes = read_blob_bytes(dir, "params", blob)?;
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let activation = match &m.activation {
        Some(a) => a.parse()?,
        None => Activation::default(),
    };
    let dims = m.layer_dims.clone().expect("validated");
    let model = UdaModel::from_flat(&dims, m.class_names.len(), activation, &params)?;
    Ok((model, m.class_names))
}
