use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, StemLayer, StemNorm};
use crate::error::{Error, Result};
use crate::tensor::{Mode, RunningStats, Tape, Tensor, Var};

/// Weight-decay class of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Weight,
    NormGain,
    Bias,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub class: ParamClass,
    pub tensor: Tensor<f32>,
}

type Id = usize;

#[derive(Clone, Debug)]
enum Norm {
    Batch { gain: Id, bias: Id, stats: usize },
    Layer { gain: Id, bias: Id },
}

#[derive(Clone, Debug)]
struct ConvUnit {
    weight: Id,
    bias: Option<Id>,
    stride: usize,
    padding: usize,
    norm: Option<Norm>,
    relu: bool,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: Id,
    bias: Id,
}

#[derive(Clone, Copy, Debug)]
struct LayerNorm {
    gain: Id,
    bias: Id,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// A built ViT: stem, class token, positional embedding, pre-norm encoder
/// blocks, and a head (final layer norm plus linear classifier on the class
/// token).
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    running: Vec<RunningStats<f32>>,
    stem: Vec<ConvUnit>,
    cls_token: Id,
    pos_embed: Id,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
}

/// Result of one forward pass.
pub struct ForwardOutput<'t> {
    pub logits: Var<'t, f32>,
    /// `[B, tokens, d]` sequence entering the first block.
    pub tokens_shape: Vec<usize>,
    /// Tape handles of every parameter, in registry order.
    pub params: Vec<Var<'t, f32>>,
}

struct Builder {
    rng: ChaCha8Rng,
    std: f64,
    params: Vec<Param>,
}

impl Builder {
    fn push(&mut self, name: String, class: ParamClass, tensor: Tensor<f32>) -> Id {
        self.params.push(Param {
            name,
            class,
            tensor: tensor.requiring_grad(),
        });
        self.params.len() - 1
    }

    /// Normal(0, std) truncated at two standard deviations.
    fn trunc_normal(&mut self, name: String, shape: Vec<usize>) -> Id {
        let std = self.std;
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break (z * std) as f32;
            }
        });
        self.push(name, ParamClass::Weight, t)
    }

    fn zeros(&mut self, name: String, len: usize) -> Id {
        self.push(name, ParamClass::Bias, Tensor::zeros([len]))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: self.trunc_normal(format!("{name}.weight"), vec![fan_in, fan_out]),
            bias: self.zeros(format!("{name}.bias"), fan_out),
        }
    }

    fn norm_params(&mut self, name: &str, len: usize) -> (Id, Id) {
        let gain = self.push(format!("{name}.gain"), ParamClass::NormGain, Tensor::full([len], 1.0));
        let bias = self.zeros(format!("{name}.bias"), len);
        (gain, bias)
    }

    fn layer_norm(&mut self, name: &str, len: usize) -> LayerNorm {
        let (gain, bias) = self.norm_params(name, len);
        LayerNorm { gain, bias }
    }
}

impl Model {
    /// Builds a network with parameters drawn deterministically from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let d = enc.hidden_size;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: config.init_std,
            params: Vec::new(),
        };
        let mut running = Vec::new();

        let mut stem = Vec::new();
        for (i, layer) in config.stem.layers(enc.image_size)?.iter().enumerate() {
            let StemLayer {
                in_channels,
                out_channels,
                kernel,
                ..
            } = *layer;
            let name = format!("stem.{i}");
            let weight = b.trunc_normal(format!("{name}.weight"), vec![out_channels, in_channels, kernel, kernel]);
            let bias = layer.has_bias.then(|| b.zeros(format!("{name}.bias"), out_channels));
            let norm = match layer.norm {
                StemNorm::None => None,
                StemNorm::Bn => {
                    let (gain, bias) = b.norm_params(&format!("{name}.bn"), out_channels);
                    running.push(RunningStats::new(out_channels));
                    Some(Norm::Batch {
                        gain,
                        bias,
                        stats: running.len() - 1,
                    })
                }
                StemNorm::Ln => {
                    let (gain, bias) = b.norm_params(&format!("{name}.ln"), out_channels);
                    Some(Norm::Layer { gain, bias })
                }
            };
            let last = i + 1 == config.stem.depth();
            stem.push(ConvUnit {
                weight,
                bias,
                stride: layer.stride,
                padding: layer.padding,
                relu: !last || norm.is_some(),
                norm,
            });
        }

        let cls_token = b.trunc_normal("cls_token".into(), vec![1, 1, d]);
        let pos_embed = b.trunc_normal("pos_embed".into(), vec![enc.tokens(), d]);
        let hidden = enc.mlp_hidden();
        let blocks = (0..enc.num_blocks)
            .map(|i| Block {
                ln1: b.layer_norm(&format!("blocks.{i}.ln1"), d),
                qkv: b.linear(&format!("blocks.{i}.attn.qkv"), d, 3 * d),
                proj: b.linear(&format!("blocks.{i}.attn.proj"), d, d),
                ln2: b.layer_norm(&format!("blocks.{i}.ln2"), d),
                fc1: b.linear(&format!("blocks.{i}.mlp.fc1"), d, hidden),
                fc2: b.linear(&format!("blocks.{i}.mlp.fc2"), hidden, d),
            })
            .collect();
        let final_ln = b.layer_norm("head.ln", d);
        let head = b.linear("head.fc", d, enc.num_classes);

        Ok(Self {
            config: config.clone(),
            params: b.params,
            running,
            stem,
            cls_token,
            pos_embed,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<f32>] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Runs the network on `[B, 3, H, W]` images. Parameters are recorded
    /// as gradient-requiring leaves in [`Mode::Train`] and as constants in
    /// [`Mode::Eval`]; batch-norm running statistics update only in train
    /// mode.
    pub fn forward<'t>(&mut self, tape: &'t Tape<f32>, images: Var<'t, f32>, mode: Mode) -> Result<ForwardOutput<'t>> {
        let enc = &self.config.encoder;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != enc.image_size || shape[3] != enc.image_size {
            return Err(Error::Input(format!(
                "expected images [B, 3, {0}, {0}], got {shape:?}",
                enc.image_size
            )));
        }
        let batch = shape[0];
        let d = enc.hidden_size;
        let (eps, momentum) = (self.config.norm_eps, self.config.bn_momentum);
        let pv: Vec<Var<'t, f32>> = self
            .params
            .iter()
            .map(|p| match mode {
                Mode::Train => tape.leaf(&p.tensor),
                Mode::Eval => tape.constant(&p.tensor),
            })
            .collect();

        let mut x = images;
        for unit in &self.stem {
            x = x.conv2d(pv[unit.weight], unit.bias.map(|b| pv[b]), [unit.stride; 2], [unit.padding; 2])?;
            match &unit.norm {
                Some(Norm::Batch { gain, bias, stats }) => {
                    x = x.batchnorm2d(pv[*gain], pv[*bias], &mut self.running[*stats], mode, momentum, eps)?;
                }
                Some(Norm::Layer { gain, bias }) => {
                    x = x
                        .permute(&[0, 2, 3, 1])?
                        .layernorm(pv[*gain], pv[*bias], eps)?
                        .permute(&[0, 3, 1, 2])?;
                }
                None => {}
            }
            if unit.relu {
                x = x.relu();
            }
        }

        let grid = enc.grid();
        let patches = x.reshape(&[batch, d, grid * grid])?.permute(&[0, 2, 1])?;
        let cls = pv[self.cls_token].expand_leading(batch)?;
        let mut h = Var::cat(&[cls, patches], 1)?.add(pv[self.pos_embed])?;
        let tokens_shape = h.shape();

        let heads = enc.num_heads;
        let head_dim = enc.head_dim();
        let tokens = enc.tokens();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let linear = |x: Var<'t, f32>, l: Linear| x.matmul(pv[l.weight])?.add(pv[l.bias]);
        let norm = |x: Var<'t, f32>, n: LayerNorm| x.layernorm(pv[n.gain], pv[n.bias], eps);

        for block in &self.blocks {
            let qkv = linear(norm(h, block.ln1)?, block.qkv)?
                .reshape(&[batch, tokens, 3, heads, head_dim])?
                .permute(&[2, 0, 3, 1, 4])?;
            let (q, k, v) = (qkv.select(0, 0)?, qkv.select(0, 1)?, qkv.select(0, 2)?);
            let attn = q.matmul_nt(k)?.scale(scale).softmax(3)?;
            let mixed = attn
                .matmul(v)?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[batch, tokens, d])?;
            h = h.add(linear(mixed, block.proj)?)?;
            let mlp = linear(linear(norm(h, block.ln2)?, block.fc1)?.gelu(), block.fc2)?;
            h = h.add(mlp)?;
        }

        let cls_out = norm(h, self.final_ln)?.select(1, 0)?;
        let logits = linear(cls_out, self.head)?;
        Ok(ForwardOutput {
            logits,
            tokens_shape,
            params: pv,
        })
    }

    /// Convenience forward on a standalone tape, returning `[B, K]` logits.
    pub fn predict(&mut self, images: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let x = tape.constant(images);
        Ok(self.forward(&tape, x, mode)?.logits.value())
    }
}
