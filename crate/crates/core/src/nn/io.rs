//! Model files: a JSON manifest at `path` plus a binary blob at
//! `<path>.blob`.
//!
//! The blob is `b"PNTR"`, one format-version byte, then every learnable
//! buffer in manifest order as little-endian IEEE-754 values of the
//! manifest's dtype (row-major). Sketches are stored only as
//! `(dist, rows, cols, seed)` and re-realized on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::attention::{AttentionKernel, ExactMha, MhaWeights, RandMha};
use super::conv::{ConvGeometry, DenseConv2d, SkConv2d};
use super::linear::DenseLinear;
use super::model::{Dtype, Layer, Model};
use super::sk_linear::{SkLinear, SkTerm};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RNG_ALGORITHM;
use crate::sketch::{SketchDescriptor, SketchOp};

pub const FORMAT_VERSION: u32 = 1;
pub const BLOB_MAGIC: &[u8; 4] = b"PNTR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub rng_algorithm: String,
    pub dtype: Dtype,
    pub blob: BlobRef,
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    /// File name relative to the manifest's directory.
    pub file: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: LayerSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSketches {
    pub s1: SketchDescriptor,
    pub s2: SketchDescriptor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    DenseLinear {
        d_in: usize,
        d_out: usize,
    },
    SkLinear {
        d_in: usize,
        d_out: usize,
        num_terms: usize,
        low_rank: usize,
        sketches: Vec<TermSketches>,
    },
    DenseConv2d {
        geometry: ConvGeometry,
    },
    SkConv2d {
        geometry: ConvGeometry,
        num_terms: usize,
        low_rank: usize,
        sketches: Vec<TermSketches>,
    },
    ExactMha {
        embed_dim: usize,
        num_heads: usize,
    },
    RandMha {
        embed_dim: usize,
        num_heads: usize,
        num_features: usize,
        kernel: AttentionKernel,
        seed: u64,
        epsilon: f64,
    },
    Relu,
    Flatten,
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn blob_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".blob");
    path.with_file_name(name)
}

fn term_sketches(l: &SkLinear) -> Result<Vec<TermSketches>> {
    l.terms()
        .iter()
        .map(|t| {
            if t.s1.is_injected() || t.s2.is_injected() {
                return Err(Error::Parameter("layers with injected sketch matrices cannot be saved".into()));
            }
            Ok(TermSketches {
                s1: t.s1.descriptor(),
                s2: t.s2.descriptor(),
            })
        })
        .collect()
}

fn layer_spec(layer: &Layer) -> Result<LayerSpec> {
    Ok(match layer {
        Layer::DenseLinear(l) => LayerSpec::DenseLinear {
            d_in: l.d_in(),
            d_out: l.d_out(),
        },
        Layer::SkLinear(l) => LayerSpec::SkLinear {
            d_in: l.d_in(),
            d_out: l.d_out(),
            num_terms: l.num_terms(),
            low_rank: l.low_rank(),
            sketches: term_sketches(l)?,
        },
        Layer::DenseConv2d(l) => LayerSpec::DenseConv2d { geometry: l.geometry },
        Layer::SkConv2d(l) => LayerSpec::SkConv2d {
            geometry: l.geometry,
            num_terms: l.inner.num_terms(),
            low_rank: l.inner.low_rank(),
            sketches: term_sketches(&l.inner)?,
        },
        Layer::ExactMha(l) => LayerSpec::ExactMha {
            embed_dim: l.weights.embed_dim(),
            num_heads: l.weights.num_heads,
        },
        Layer::RandMha(l) => LayerSpec::RandMha {
            embed_dim: l.weights.embed_dim(),
            num_heads: l.weights.num_heads,
            num_features: l.num_features(),
            kernel: l.kernel(),
            seed: l.seed(),
            epsilon: l.epsilon,
        },
        Layer::Relu => LayerSpec::Relu,
        Layer::Flatten => LayerSpec::Flatten,
    })
}

/// Writes the manifest to `path` and the parameter blob next to it.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut layers = Vec::with_capacity(model.len());
    let mut blob = Vec::new();
    blob.extend_from_slice(BLOB_MAGIC);
    blob.push(FORMAT_VERSION as u8);
    for nl in model.layers() {
        layers.push(LayerEntry {
            name: nl.name.clone(),
            spec: layer_spec(&nl.layer)?,
        });
        for buf in nl.layer.params() {
            for &v in buf {
                match model.dtype {
                    Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
    }
    let bpath = blob_path(path);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        dtype: model.dtype,
        blob: BlobRef {
            file: bpath
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Parameter(format!("unusable model path {}", path.display())))?
                .to_string(),
            bytes: blob.len() as u64,
        },
        layers,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&bpath, &blob).map_err(io_err(&bpath))?;
    fs::write(path, text + "\n").map_err(io_err(path))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| load_err(path, format!("malformed manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(load_err(
            path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    if manifest.rng_algorithm != RNG_ALGORITHM {
        return Err(load_err(
            path,
            format!(
                "sketches were drawn with {:?}, this build uses {RNG_ALGORITHM:?}",
                manifest.rng_algorithm
            ),
        ));
    }
    Ok(manifest)
}

struct BlobReader<'a> {
    data: &'a [u8],
    dtype: Dtype,
    path: &'a Path,
}

impl BlobReader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let w = self.dtype.width();
        if self.data.len() < n * w {
            return Err(load_err(self.path, "blob is shorter than the manifest requires"));
        }
        let (head, rest) = self.data.split_at(n * w);
        self.data = rest;
        Ok(match self.dtype {
            Dtype::F64 => head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        })
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::from_vec(rows, cols, self.take(rows * cols)?)
    }
}

fn build_sk_linear(
    d_in: usize,
    d_out: usize,
    num_terms: usize,
    low_rank: usize,
    sketches: &[TermSketches],
    blob: &mut BlobReader,
) -> Result<SkLinear> {
    if sketches.len() != num_terms {
        return Err(load_err(blob.path, "sketch list length differs from num_terms"));
    }
    let mut terms = Vec::with_capacity(num_terms);
    for sk in sketches {
        let (s1, s2) = (
            SketchOp::from_descriptor(sk.s1)?,
            SketchOp::from_descriptor(sk.s2)?,
        );
        let u1 = blob.matrix(low_rank, d_in)?;
        let u2 = blob.matrix(d_out, low_rank)?;
        terms.push(SkTerm { s1, u1, s2, u2 });
    }
    let bias = blob.take(d_out)?;
    SkLinear::from_parts(d_in, d_out, terms, bias)
}

fn build_layer(spec: &LayerSpec, blob: &mut BlobReader) -> Result<Layer> {
    let mha_weights = |embed_dim: usize, num_heads: usize, blob: &mut BlobReader| -> Result<MhaWeights> {
        let q = blob.matrix(embed_dim, embed_dim)?;
        let k = blob.matrix(embed_dim, embed_dim)?;
        let v = blob.matrix(embed_dim, embed_dim)?;
        let o = blob.matrix(embed_dim, embed_dim)?;
        MhaWeights::new(num_heads, q, k, v, o)
    };
    Ok(match spec {
        &LayerSpec::DenseLinear { d_in, d_out } => {
            let w = blob.matrix(d_out, d_in)?;
            Layer::DenseLinear(DenseLinear::new(w, blob.take(d_out)?)?)
        }
        LayerSpec::SkLinear {
            d_in,
            d_out,
            num_terms,
            low_rank,
            sketches,
        } => Layer::SkLinear(build_sk_linear(*d_in, *d_out, *num_terms, *low_rank, sketches, blob)?),
        LayerSpec::DenseConv2d { geometry } => {
            let w = blob.matrix(geometry.c_out, geometry.patch_len())?;
            Layer::DenseConv2d(DenseConv2d::new(*geometry, w, blob.take(geometry.c_out)?)?)
        }
        LayerSpec::SkConv2d {
            geometry,
            num_terms,
            low_rank,
            sketches,
        } => {
            let inner = build_sk_linear(
                geometry.patch_len(),
                geometry.c_out,
                *num_terms,
                *low_rank,
                sketches,
                blob,
            )?;
            Layer::SkConv2d(SkConv2d::from_inner(*geometry, inner)?)
        }
        &LayerSpec::ExactMha { embed_dim, num_heads } => {
            Layer::ExactMha(ExactMha::new(mha_weights(embed_dim, num_heads, blob)?))
        }
        &LayerSpec::RandMha {
            embed_dim,
            num_heads,
            num_features,
            kernel,
            seed,
            epsilon,
        } => {
            let mut l = RandMha::new(mha_weights(embed_dim, num_heads, blob)?, num_features, kernel, seed)?;
            l.epsilon = epsilon;
            Layer::RandMha(l)
        }
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Flatten => Layer::Flatten,
    })
}

pub fn load(path: &Path) -> Result<Model> {
    let manifest = read_manifest(path)?;
    let bpath = path.with_file_name(&manifest.blob.file);
    let data = fs::read(&bpath).map_err(io_err(&bpath))?;
    if data.len() as u64 != manifest.blob.bytes {
        return Err(load_err(
            &bpath,
            format!("blob has {} bytes, manifest records {}", data.len(), manifest.blob.bytes),
        ));
    }
    if data.len() < 5 || &data[..4] != BLOB_MAGIC {
        return Err(load_err(&bpath, "missing blob magic"));
    }
    if data[4] as u32 != FORMAT_VERSION {
        return Err(load_err(&bpath, format!("unsupported blob version {}", data[4])));
    }
    let mut reader = BlobReader {
        data: &data[5..],
        dtype: manifest.dtype,
        path: &bpath,
    };
    let mut model = Model::new();
    model.dtype = manifest.dtype;
    for entry in &manifest.layers {
        let layer = build_layer(&entry.spec, &mut reader).map_err(|e| match e {
            e @ Error::Load { .. } => e,
            other => load_err(path, format!("layer {:?}: {other}", entry.name)),
        })?;
        model
            .push(entry.name.clone(), layer)
            .map_err(|e| load_err(path, e.to_string()))?;
    }
    if !reader.data.is_empty() {
        return Err(load_err(&bpath, format!("{} trailing bytes in blob", reader.data.len())));
    }
    Ok(model)
}

impl Model {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        load(path.as_ref())
    }
}
