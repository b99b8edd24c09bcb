//! Parameter storage, seeded initialization, and the on-disk weight set.
//!
//! A weight set is a directory with one NPY file per parameter plus
//! `index.json` naming each parameter, its shape, and its file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ToyVitError};
use crate::mapio::{self, npy};

pub const INDEX_FILE: &str = "index.json";
pub const INIT_STD: f64 = 0.02;

/// Affine map `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub norm1: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub norm2: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub patch_embed: Linear,
    /// One row per token, the CLS row first when present.
    pub pos_embed: Array2<f64>,
    pub cls_token: Option<Array1<f64>>,
    pub blocks: Vec<BlockWeights>,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    // Values are rounded through f32 so a saved weight set reloads bit-exactly.
    fn sample(&mut self) -> f64 {
        self.normal.sample(&mut self.rng) as f32 as f64
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.sample())
    }

    fn vector(&mut self, n: usize) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || self.sample())
    }

    fn linear(&mut self, inp: usize, out: usize) -> Linear {
        Linear {
            weight: self.matrix(inp, out),
            bias: Array1::zeros(out),
        }
    }
}

fn layer_norm_identity(d: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: Array1::ones(d),
        beta: Array1::zeros(d),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightIndex {
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

enum Param<'a> {
    Matrix(&'a Array2<f64>),
    Vector(&'a Array1<f64>),
}

impl Weights {
    /// Gaussian(0, 0.02) matrices and embeddings, zero biases, identity norms.
    pub fn init(config: &ModelConfig) -> Result<Weights, ToyVitError> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        let d = config.embed_dim;
        let hidden = d * config.mlp_ratio;
        let patch_embed = init.linear(config.patch_dim(), d);
        let pos_embed = init.matrix(config.sequence_len(), d);
        let cls_token = config.use_cls_token.then(|| init.vector(d));
        let blocks = (0..config.blocks)
            .map(|_| BlockWeights {
                norm1: layer_norm_identity(d),
                query: init.linear(d, d),
                key: init.linear(d, d),
                value: init.linear(d, d),
                proj: init.linear(d, d),
                norm2: layer_norm_identity(d),
                fc1: init.linear(d, hidden),
                fc2: init.linear(hidden, d),
            })
            .collect();
        Ok(Weights {
            patch_embed,
            pos_embed,
            cls_token,
            blocks,
        })
    }

    fn named(&self) -> Vec<(String, Param<'_>)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), Param::Matrix(&self.patch_embed.weight)),
            ("patch_embed.bias".to_string(), Param::Vector(&self.patch_embed.bias)),
            ("pos_embed".to_string(), Param::Matrix(&self.pos_embed)),
        ];
        if let Some(cls) = &self.cls_token {
            out.push(("cls_token".to_string(), Param::Vector(cls)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.push((p("norm1.gamma"), Param::Vector(&b.norm1.gamma)));
            out.push((p("norm1.beta"), Param::Vector(&b.norm1.beta)));
            for (name, lin) in [("attn.query", &b.query), ("attn.key", &b.key), ("attn.value", &b.value), ("attn.proj", &b.proj)] {
                out.push((p(&format!("{name}.weight")), Param::Matrix(&lin.weight)));
                out.push((p(&format!("{name}.bias")), Param::Vector(&lin.bias)));
            }
            out.push((p("norm2.gamma"), Param::Vector(&b.norm2.gamma)));
            out.push((p("norm2.beta"), Param::Vector(&b.norm2.beta)));
            for (name, lin) in [("mlp.fc1", &b.fc1), ("mlp.fc2", &b.fc2)] {
                out.push((p(&format!("{name}.weight")), Param::Matrix(&lin.weight)));
                out.push((p(&format!("{name}.bias")), Param::Vector(&lin.bias)));
            }
        }
        out
    }

    /// Checks every parameter shape against `config` and that all values are finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ToyVitError> {
        config.validate()?;
        let reference = Weights::shapes(config);
        let named = self.named();
        if named.len() != reference.len() {
            return Err(ToyVitError::Shape(format!(
                "weights hold {} parameters, config expects {}",
                named.len(),
                reference.len()
            )));
        }
        for ((name, param), (ref_name, ref_shape)) in named.iter().zip(&reference) {
            let (shape, finite) = match param {
                Param::Matrix(m) => (m.shape().to_vec(), m.iter().all(|v| v.is_finite())),
                Param::Vector(v) => (v.shape().to_vec(), v.iter().all(|x| x.is_finite())),
            };
            if name != ref_name || &shape != ref_shape {
                return Err(ToyVitError::Shape(format!(
                    "parameter {name} has shape {shape:?}, expected {ref_name} {ref_shape:?}"
                )));
            }
            if !finite {
                return Err(ToyVitError::Numeric {
                    block: None,
                    what: format!("parameter {name} holds non-finite values"),
                });
            }
        }
        Ok(())
    }

    /// Expected (name, shape) list for a config, in storage order.
    fn shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.embed_dim;
        let hidden = d * config.mlp_ratio;
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![config.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![config.sequence_len(), d]),
        ];
        if config.use_cls_token {
            out.push(("cls_token".to_string(), vec![d]));
        }
        for i in 0..config.blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.push((p("norm1.gamma"), vec![d]));
            out.push((p("norm1.beta"), vec![d]));
            for name in ["attn.query", "attn.key", "attn.value", "attn.proj"] {
                out.push((p(&format!("{name}.weight")), vec![d, d]));
                out.push((p(&format!("{name}.bias")), vec![d]));
            }
            out.push((p("norm2.gamma"), vec![d]));
            out.push((p("norm2.beta"), vec![d]));
            out.push((p("mlp.fc1.weight"), vec![d, hidden]));
            out.push((p("mlp.fc1.bias"), vec![hidden]));
            out.push((p("mlp.fc2.weight"), vec![hidden, d]));
            out.push((p("mlp.fc2.bias"), vec![d]));
        }
        out
    }

    /// Writes one float32 NPY file per parameter plus `index.json`.
    pub fn save(&self, config: &ModelConfig, dir: &Path) -> Result<(), ToyVitError> {
        self.validate(config)?;
        fs::create_dir_all(dir).map_err(mapio::MapIoError::from)?;
        let mut params = Vec::new();
        for (name, param) in self.named() {
            let (shape, values): (Vec<usize>, Vec<f32>) = match param {
                Param::Matrix(m) => (m.shape().to_vec(), m.iter().map(|&v| v as f32).collect()),
                Param::Vector(v) => (v.shape().to_vec(), v.iter().map(|&x| x as f32).collect()),
            };
            let file = format!("{name}.npy");
            let mut bytes = Vec::new();
            npy::write_f32(&mut bytes, &shape, &values)?;
            fs::write(dir.join(&file), bytes).map_err(mapio::MapIoError::from)?;
            params.push(ParamEntry { name, shape, file });
        }
        let index = WeightIndex {
            config: config.clone(),
            params,
        };
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(dir.join(INDEX_FILE), text + "\n").map_err(mapio::MapIoError::from)?;
        Ok(())
    }

    /// Loads a weight set and the config it was saved with.
    pub fn load(dir: &Path) -> Result<(ModelConfig, Weights), ToyVitError> {
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(mapio::MapIoError::from)?;
        let index: WeightIndex = serde_json::from_str(&text).map_err(|source| mapio::MapIoError::Json {
            path: index_path.clone(),
            source,
        })?;
        let config = index.config;
        config.validate()?;

        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for entry in &index.params {
            let (shape, data) = mapio::read_npy(&dir.join(&entry.file))?;
            if shape != entry.shape {
                return Err(ToyVitError::Shape(format!(
                    "{}: index says {:?}, file holds {:?}",
                    entry.name, entry.shape, shape
                )));
            }
            tensors.insert(entry.name.clone(), (shape, data));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>, ToyVitError> {
            let (s, data) = tensors
                .remove(name)
                .ok_or_else(|| ToyVitError::Shape(format!("weight set lacks {name}")))?;
            if s != shape {
                return Err(ToyVitError::Shape(format!("{name} has shape {s:?}, expected {shape:?}")));
            }
            Ok(data.into_iter().map(f64::from).collect())
        };
        let mut matrix = |name: &str, r: usize, c: usize| -> Result<Array2<f64>, ToyVitError> {
            Ok(Array2::from_shape_vec((r, c), take(name, &[r, c])?).expect("shape checked"))
        };
        let d = config.embed_dim;
        let hidden = d * config.mlp_ratio;
        let patch_w = matrix("patch_embed.weight", config.patch_dim(), d)?;
        let pos_embed = matrix("pos_embed", config.sequence_len(), d)?;
        let mut vector = |name: &str, n: usize| -> Result<Array1<f64>, ToyVitError> { Ok(Array1::from(take(name, &[n])?)) };
        let patch_b = vector("patch_embed.bias", d)?;
        let cls_token = if config.use_cls_token { Some(vector("cls_token", d)?) } else { None };

        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            let mut lin = |name: &str, inp: usize, out: usize| -> Result<Linear, ToyVitError> {
                let w = take(&p(&format!("{name}.weight")), &[inp, out])?;
                let b = take(&p(&format!("{name}.bias")), &[out])?;
                Ok(Linear {
                    weight: Array2::from_shape_vec((inp, out), w).expect("shape checked"),
                    bias: Array1::from(b),
                })
            };
            let query = lin("attn.query", d, d)?;
            let key = lin("attn.key", d, d)?;
            let value = lin("attn.value", d, d)?;
            let proj = lin("attn.proj", d, d)?;
            let fc1 = lin("mlp.fc1", d, hidden)?;
            let fc2 = lin("mlp.fc2", hidden, d)?;
            let mut norm = |name: &str| -> Result<LayerNormParams, ToyVitError> {
                Ok(LayerNormParams {
                    gamma: Array1::from(take(&p(&format!("{name}.gamma")), &[d])?),
                    beta: Array1::from(take(&p(&format!("{name}.beta")), &[d])?),
                })
            };
            let norm1 = norm("norm1")?;
            let norm2 = norm("norm2")?;
            blocks.push(BlockWeights {
                norm1,
                query,
                key,
                value,
                proj,
                norm2,
                fc1,
                fc2,
            });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(ToyVitError::Shape(format!("weight set has unexpected parameter {extra}")));
        }
        let weights = Weights {
            patch_embed: Linear {
                weight: patch_w,
                bias: patch_b,
            },
            pos_embed,
            cls_token,
            blocks,
        };
        weights.validate(&config)?;
        Ok((config, weights))
    }
}
