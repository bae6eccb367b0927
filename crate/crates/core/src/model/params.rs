use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::params::{stable_hash, ParamArray};

/// Layer role of a parameter group; the unit of sharing decisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Emb,
    E1,
    E2,
    Attn,
    D1,
    D2,
    Out,
    Ptr,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::Emb,
        Tag::E1,
        Tag::E2,
        Tag::Attn,
        Tag::D1,
        Tag::D2,
        Tag::Out,
        Tag::Ptr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Emb => "Emb",
            Tag::E1 => "E1",
            Tag::E2 => "E2",
            Tag::Attn => "Attn",
            Tag::D1 => "D1",
            Tag::D2 => "D2",
            Tag::Out => "Out",
            Tag::Ptr => "Ptr",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "defaults::emb_dim")]
    pub emb_dim: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    /// Width of the additive attention layer; 0 means `2 * hidden`.
    #[serde(default)]
    pub attn_dim: usize,
    /// Mix in the copy distribution through the generation switch.
    #[serde(default = "defaults::yes")]
    pub pointer: bool,
    #[serde(default = "defaults::init_range")]
    pub init_range: f64,
}

mod defaults {
    pub fn emb_dim() -> usize {
        16
    }
    pub fn hidden() -> usize {
        32
    }
    pub fn yes() -> bool {
        true
    }
    pub fn init_range() -> f64 {
        0.02
    }
}

impl ModelConfig {
    /// Desk-scale dimensions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            emb_dim: 16,
            hidden: 32,
            attn_dim: 0,
            pointer: true,
            init_range: 0.02,
        }
    }

    /// Full-scale dimensions (embedding 128, hidden 256).
    pub fn full(vocab_size: usize) -> Self {
        ModelConfig {
            emb_dim: 128,
            hidden: 256,
            ..ModelConfig::desk(vocab_size)
        }
    }

    pub fn attention_width(&self) -> usize {
        if self.attn_dim == 0 {
            2 * self.hidden
        } else {
            self.attn_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::data::RESERVED.len() {
            return Err(Error::config("model.vocab_size", "must exceed the 4 reserved ids"));
        }
        if self.emb_dim == 0 || self.hidden == 0 {
            return Err(Error::config("model", "dimensions must be positive"));
        }
        if !(self.init_range >= 0.0) {
            return Err(Error::config("model.init_range", "must be nonnegative"));
        }
        Ok(())
    }
}

/// One named parameter array and its layer tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub tag: Tag,
    pub name: &'static str,
    pub shape: Vec<usize>,
}

/// Every parameter of the model in binding order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (v, e, h, a) = (cfg.vocab_size, cfg.emb_dim, cfg.hidden, cfg.attention_width());
    let spec = |tag, name, shape: &[usize]| ParamSpec {
        tag,
        name,
        shape: shape.to_vec(),
    };
    vec![
        spec(Tag::Emb, "emb", &[v, e]),
        spec(Tag::E1, "enc1_fw_w", &[e + h, 4 * h]),
        spec(Tag::E1, "enc1_fw_b", &[4 * h]),
        spec(Tag::E1, "enc1_bw_w", &[e + h, 4 * h]),
        spec(Tag::E1, "enc1_bw_b", &[4 * h]),
        spec(Tag::E2, "enc2_fw_w", &[2 * h + h, 4 * h]),
        spec(Tag::E2, "enc2_fw_b", &[4 * h]),
        spec(Tag::E2, "enc2_bw_w", &[2 * h + h, 4 * h]),
        spec(Tag::E2, "enc2_bw_b", &[4 * h]),
        // decoder layer 1 reads [previous embedding; previous context]
        spec(Tag::D1, "dec1_w", &[e + 2 * h + h, 4 * h]),
        spec(Tag::D1, "dec1_b", &[4 * h]),
        spec(Tag::D1, "bridge1_h_w", &[2 * h, h]),
        spec(Tag::D1, "bridge1_h_b", &[h]),
        spec(Tag::D1, "bridge1_c_w", &[2 * h, h]),
        spec(Tag::D1, "bridge1_c_b", &[h]),
        spec(Tag::D2, "dec2_w", &[h + h, 4 * h]),
        spec(Tag::D2, "dec2_b", &[4 * h]),
        spec(Tag::D2, "bridge2_h_w", &[2 * h, h]),
        spec(Tag::D2, "bridge2_h_b", &[h]),
        spec(Tag::D2, "bridge2_c_w", &[2 * h, h]),
        spec(Tag::D2, "bridge2_c_b", &[h]),
        spec(Tag::Attn, "attn_w_h", &[2 * h, a]),
        spec(Tag::Attn, "attn_w_s", &[h, a]),
        spec(Tag::Attn, "attn_w_c", &[1, a]),
        spec(Tag::Attn, "attn_v", &[a, 1]),
        spec(Tag::Attn, "attn_b", &[a]),
        spec(Tag::Out, "out_w_f", &[3 * h, h]),
        spec(Tag::Out, "out_b_f", &[h]),
        spec(Tag::Out, "out_v_p", &[h, v]),
        spec(Tag::Out, "out_b_p", &[v]),
        spec(Tag::Ptr, "ptr_w_g", &[2 * h, 1]),
        spec(Tag::Ptr, "ptr_u_g", &[h, 1]),
        spec(Tag::Ptr, "ptr_v_g", &[e, 1]),
        spec(Tag::Ptr, "ptr_b_g", &[1]),
    ]
}

/// Uniform initialization, seeded per (seed, task, parameter name) so a
/// task's starting point does not depend on which other tasks exist.
pub fn init_array(spec: &ParamSpec, range: f64, seed: u64, task: &str) -> ParamArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&[task, spec.name]));
    ParamArray::uniform(&spec.shape, range, &mut rng)
}

/// One task's full parameter set, in [`param_specs`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub arrays: Vec<ParamArray>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64, task: &str) -> Self {
        let arrays = param_specs(config)
            .iter()
            .map(|s| init_array(s, config.init_range, seed, task))
            .collect();
        ModelParams {
            config: config.clone(),
            arrays,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let arrays = param_specs(config)
            .iter()
            .map(|s| ParamArray::zeros(&s.shape))
            .collect();
        ModelParams {
            config: config.clone(),
            arrays,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        param_specs(&self.config)
    }

    pub fn refs(&self) -> Vec<&ParamArray> {
        self.arrays.iter().collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        let i = self.specs().iter().position(|s| s.name == name)?;
        self.arrays.get(i)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        let i = self.specs().iter().position(|s| s.name == name)?;
        self.arrays.get_mut(i)
    }

    pub fn group(&self, tag: Tag) -> Vec<(&'static str, &ParamArray)> {
        self.specs()
            .into_iter()
            .zip(&self.arrays)
            .filter(|(s, _)| s.tag == tag)
            .map(|(s, a)| (s.name, a))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.specs();
        if specs.len() != self.arrays.len() {
            return Err(Error::contract(format!(
                "expected {} parameter arrays, found {}",
                specs.len(),
                self.arrays.len()
            )));
        }
        for (s, a) in specs.iter().zip(&self.arrays) {
            if s.shape != a.shape || a.data.len() != a.shape.iter().product::<usize>() {
                return Err(Error::Dimension {
                    op: s.name,
                    lhs: s.shape.clone(),
                    rhs: a.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BridgeWeights {
    pub h_w: Tensor,
    pub h_b: Tensor,
    pub c_w: Tensor,
    pub c_b: Tensor,
}

/// Parameters bound as graph leaves.
#[derive(Clone, Debug)]
pub struct Weights {
    pub emb: Tensor,
    pub enc1_fw: LstmWeights,
    pub enc1_bw: LstmWeights,
    pub enc2_fw: LstmWeights,
    pub enc2_bw: LstmWeights,
    pub dec1: LstmWeights,
    pub bridge1: BridgeWeights,
    pub dec2: LstmWeights,
    pub bridge2: BridgeWeights,
    pub attn_w_h: Tensor,
    pub attn_w_s: Tensor,
    pub attn_w_c: Tensor,
    pub attn_v: Tensor,
    pub attn_b: Tensor,
    pub out_w_f: Tensor,
    pub out_b_f: Tensor,
    pub out_v_p: Tensor,
    pub out_b_p: Tensor,
    pub ptr_w_g: Tensor,
    pub ptr_u_g: Tensor,
    pub ptr_v_g: Tensor,
    pub ptr_b_g: Tensor,
    /// All leaves in [`param_specs`] order.
    pub leaves: Vec<Tensor>,
}

impl Weights {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, arrays: &[&ParamArray]) -> Result<Self> {
        let specs = param_specs(cfg);
        if specs.len() != arrays.len() {
            return Err(Error::contract(format!(
                "expected {} parameter arrays, got {}",
                specs.len(),
                arrays.len()
            )));
        }
        let mut leaves = Vec::with_capacity(specs.len());
        for (s, a) in specs.iter().zip(arrays) {
            if s.shape != a.shape {
                return Err(Error::Dimension {
                    op: s.name,
                    lhs: s.shape.clone(),
                    rhs: a.shape.clone(),
                });
            }
            leaves.push(g.param_f64(&a.data, &a.shape)?);
        }
        let l = &leaves;
        let lstm = |i: usize| LstmWeights { w: l[i], b: l[i + 1] };
        let bridge = |i: usize| BridgeWeights {
            h_w: l[i],
            h_b: l[i + 1],
            c_w: l[i + 2],
            c_b: l[i + 3],
        };
        Ok(Weights {
            emb: l[0],
            enc1_fw: lstm(1),
            enc1_bw: lstm(3),
            enc2_fw: lstm(5),
            enc2_bw: lstm(7),
            dec1: lstm(9),
            bridge1: bridge(11),
            dec2: lstm(15),
            bridge2: bridge(17),
            attn_w_h: l[21],
            attn_w_s: l[22],
            attn_w_c: l[23],
            attn_v: l[24],
            attn_b: l[25],
            out_w_f: l[26],
            out_b_f: l[27],
            out_v_p: l[28],
            out_b_p: l[29],
            ptr_w_g: l[30],
            ptr_u_g: l[31],
            ptr_v_g: l[32],
            ptr_b_g: l[33],
            leaves,
        })
    }
}
