//! Named parameter collections and their container-file persistence.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// The six independently freezable parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Collection {
    /// Semantic encoder.
    Alpha,
    /// Channel encoder.
    Beta,
    ChiBob,
    DeltaBob,
    ChiEve,
    DeltaEve,
}

impl Collection {
    pub const ALL: [Collection; 6] = [
        Collection::Alpha,
        Collection::Beta,
        Collection::ChiBob,
        Collection::DeltaBob,
        Collection::ChiEve,
        Collection::DeltaEve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Collection::Alpha => "alpha",
            Collection::Beta => "beta",
            Collection::ChiBob => "chi_B",
            Collection::DeltaBob => "delta_B",
            Collection::ChiEve => "chi_E",
            Collection::DeltaEve => "delta_E",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&c| c == self).expect("listed") as u64
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: BTreeMap<String, Matrix>,
    pub frozen: bool,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    fn shapes(&self) -> BTreeMap<&str, (usize, usize)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.dim())).collect()
    }
}

/// All model parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    pub config: ModelConfig,
    sets: BTreeMap<Collection, ParamSet>,
}

const HEADER_KEY: &str = "secure_semcom";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model_config: ModelConfig,
    frozen: BTreeMap<String, bool>,
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    out: BTreeMap<String, Matrix>,
}

impl Init<'_> {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Array2::from_shape_fn((fan_in, fan_out), |_| self.rng.random_range(-a..a));
        self.out.insert(name, m);
    }

    fn normal(&mut self, name: &str, rows: usize, cols: usize) {
        let m = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut *self.rng));
        self.out.insert(name.to_string(), m);
    }

    fn fill(&mut self, name: String, cols: usize, value: f64) {
        self.out.insert(name, Array2::from_elem((1, cols), value));
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.xavier(format!("{prefix}.w"), fan_in, fan_out);
        self.fill(format!("{prefix}.b"), fan_out, 0.0);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.xavier(format!("{prefix}.w{p}"), d, d);
            self.fill(format!("{prefix}.b{p}"), d, 0.0);
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.fill(format!("{prefix}.gamma"), d, 1.0);
        self.fill(format!("{prefix}.beta"), d, 0.0);
    }

    fn ffn(&mut self, prefix: &str, d: usize, hidden: usize) {
        self.dense(&format!("{prefix}.1"), d, hidden);
        self.dense(&format!("{prefix}.2"), hidden, d);
    }
}

fn init_collection(config: &ModelConfig, which: Collection, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (which.index() + 1));
    let mut init = Init {
        rng: &mut rng,
        out: BTreeMap::new(),
    };
    let d = config.model_dim;
    match which {
        Collection::Alpha => {
            init.normal("embed", config.vocab_size, d);
            for l in 0..config.layers {
                init.attention(&format!("layer{l}.attn"), d);
                init.norm(&format!("layer{l}.ln1"), d);
                init.ffn(&format!("layer{l}.ffn"), d, config.ff_dim);
                init.norm(&format!("layer{l}.ln2"), d);
            }
        }
        Collection::Beta => {
            init.dense("dense1", d, config.channel_hidden);
            init.dense("dense2", config.channel_hidden, config.symbol_dim);
        }
        Collection::ChiBob | Collection::ChiEve => {
            init.dense("dense1", config.symbol_dim, config.channel_hidden);
            init.dense("dense2", config.channel_hidden, d);
        }
        Collection::DeltaBob | Collection::DeltaEve => {
            init.normal("embed", config.vocab_size, d);
            for l in 0..config.layers {
                init.attention(&format!("layer{l}.self_attn"), d);
                init.norm(&format!("layer{l}.ln1"), d);
                init.attention(&format!("layer{l}.cross_attn"), d);
                init.norm(&format!("layer{l}.ln2"), d);
                init.ffn(&format!("layer{l}.ffn"), d, config.ff_dim);
                init.norm(&format!("layer{l}.ln3"), d);
            }
            init.dense("out", d, config.vocab_size);
        }
    }
    ParamSet {
        tensors: init.out,
        frozen: false,
    }
}

impl ParameterBundle {
    /// Deterministic initialization; every collection draws from its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sets = Collection::ALL
            .into_iter()
            .map(|c| (c, init_collection(config, c, seed)))
            .collect();
        Ok(Self {
            config: config.clone(),
            sets,
        })
    }

    pub fn set(&self, which: Collection) -> &ParamSet {
        &self.sets[&which]
    }

    pub fn set_mut(&mut self, which: Collection) -> &mut ParamSet {
        self.sets.get_mut(&which).expect("all collections present")
    }

    pub fn is_frozen(&self, which: Collection) -> bool {
        self.sets[&which].frozen
    }

    pub fn set_frozen(&mut self, which: Collection, frozen: bool) {
        self.set_mut(which).frozen = frozen;
    }

    /// Freezes exactly the listed collections and unfreezes the rest.
    pub fn freeze_only(&mut self, frozen: &[Collection]) {
        for c in Collection::ALL {
            self.set_frozen(c, frozen.contains(&c));
        }
    }

    pub fn num_params(&self) -> usize {
        self.sets.values().map(ParamSet::num_params).sum()
    }

    /// Copies `src` into `dst`; shapes must match exactly. The frozen flag of
    /// `dst` is kept.
    pub fn copy_collection(&mut self, src: Collection, dst: Collection) -> Result<()> {
        let tensors = self.sets[&src].tensors.clone();
        self.replace_tensors(dst, tensors)
    }

    fn replace_tensors(&mut self, dst: Collection, tensors: BTreeMap<String, Matrix>) -> Result<()> {
        let target = self.set(dst);
        let want = target.shapes();
        let got: BTreeMap<&str, (usize, usize)> = tensors.iter().map(|(k, v)| (k.as_str(), v.dim())).collect();
        if want != got {
            return Err(Error::Shape(format!("tensors do not fit collection {dst}")));
        }
        self.set_mut(dst).tensors = tensors;
        Ok(())
    }

    /// Loads collection `src` of a checkpoint into slot `dst` of this bundle.
    pub fn load_collection_from(&mut self, checkpoint: &ParameterBundle, src: Collection, dst: Collection) -> Result<()> {
        self.replace_tensors(dst, checkpoint.set(src).tensors.clone())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blobs: Vec<(String, Vec<u8>, Vec<usize>)> = Vec::new();
        for (c, set) in &self.sets {
            for (name, m) in &set.tensors {
                let bytes: Vec<u8> = m.iter().flat_map(|v| v.to_le_bytes()).collect();
                blobs.push((format!("{}/{name}", c.name()), bytes, vec![m.nrows(), m.ncols()]));
            }
        }
        let views: Vec<(String, TensorView<'_>)> = blobs
            .iter()
            .map(|(k, b, s)| {
                TensorView::new(Dtype::F64, s.clone(), b)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let frozen: BTreeMap<String, bool> = self.sets.iter().map(|(c, s)| (c.name().to_string(), s.frozen)).collect();
        // a single entry keeps the header bytes independent of hash order
        let header = CheckpointHeader {
            model_config: self.config.clone(),
            frozen,
        };
        let meta = HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(&header)?)]);
        let bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        let CheckpointHeader {
            model_config: config,
            frozen,
        } = serde_json::from_str(
            meta.get(HEADER_KEY)
                .ok_or_else(|| Error::Checkpoint(format!("missing {HEADER_KEY} metadata")))?,
        )?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut sets: BTreeMap<Collection, ParamSet> = BTreeMap::new();
        for (key, view) in st.tensors() {
            let (cname, pname) = key
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor key {key}")))?;
            let c = Collection::from_name(cname).ok_or_else(|| Error::Checkpoint(format!("unknown collection {cname}")))?;
            if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
                return Err(Error::Checkpoint(format!("tensor {key} is not a 2-d f64 array")));
            }
            let values: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let m = Array2::from_shape_vec((view.shape()[0], view.shape()[1]), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            sets.entry(c)
                .or_insert_with(|| ParamSet {
                    tensors: BTreeMap::new(),
                    frozen: frozen.get(cname).copied().unwrap_or(false),
                })
                .tensors
                .insert(pname.to_string(), m);
        }

        // shapes must agree with what the stored config would initialize
        let reference = Self::init(&config, 0)?;
        for c in Collection::ALL {
            let got = sets.get(&c).ok_or_else(|| Error::Checkpoint(format!("collection {c} missing")))?;
            if got.shapes() != reference.set(c).shapes() {
                return Err(Error::Shape(format!("collection {c} does not match the stored model config")));
            }
        }
        Ok(Self { config, sets })
    }

    /// Loads a checkpoint and requires it to match `expected`.
    pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let b = Self::load_checkpoint(path)?;
        if &b.config != expected {
            return Err(Error::Shape(format!(
                "checkpoint config {:?} does not match {:?}",
                b.config, expected
            )));
        }
        Ok(b)
    }
}
