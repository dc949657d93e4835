//! The conversion network.
//!
//! ```text
//!  source features ──► source encoder ──► Extractor 1 ──► Extractor 2 ──► Extractor 3 ──► smoothers ──► linear ──► mel_pre ──► (+ PostNet) ──► mel_post
//!                                            ▲               ▲               ▲
//!  target mels ──► Conv1d 1 ──► Conv1d 2 ──► Conv1d 3        │               │
//!                     │            └─────────────────────────┘               │
//!                     └──────────────────────────────────────────────────────┘
//!                                  (Conv1d 3 feeds Extractor 1)
//! ```
//!
//! Extractor 1 has no residual path around its cross-attention, so every
//! piece of information the decoder sees after it was retrieved from the
//! target memory. No positional encodings are used anywhere.

mod config;
mod layers;

pub use config::ModelConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamGroup, ParameterStore, Scalar, Tape, Tensor, Var};
use layers::{Builder, Conv, DecoderLayer, Linear};

/// Raw cross-attention weights, one `H × Tq × Tk` tensor per extractor.
#[derive(Clone, Debug, Default)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor<f64>>,
}

/// Outputs of the three target-encoder convolutions.
#[derive(Clone, Copy, Debug)]
pub struct TargetTaps {
    pub conv1: Var,
    pub conv2: Var,
    pub conv3: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub mel_pre: Var,
    pub mel_post: Var,
    pub attention: AttentionRecord,
}

/// Plain-tensor result of [`FragmentVc::infer`].
#[derive(Clone, Debug)]
pub struct Inference<T: Scalar> {
    pub mel_pre: Tensor<T>,
    pub mel_post: Tensor<T>,
    pub attention: AttentionRecord,
}

#[derive(Clone, Debug)]
struct Layout {
    source: [Linear; 2],
    target: [Conv; 3],
    extractors: Vec<DecoderLayer>,
    smoothers: Vec<DecoderLayer>,
    projection: Linear,
    postnet: Vec<Conv>,
}

#[derive(Clone, Debug)]
pub struct FragmentVc<T: Scalar = f32> {
    config: ModelConfig,
    params: ParameterStore<T>,
    layout: Layout,
}

impl<T: Scalar> FragmentVc<T> {
    /// Builds a model with Xavier-uniform weights, zero biases, unit
    /// layer-norm gains and a zero final PostNet layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let c = &config;
        let d = c.d_model;

        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::SourceEncoder,
        };
        let source = [
            b.linear("source_encoder.linear1", c.upstream_dim, d)?,
            b.linear("source_encoder.linear2", d, d)?,
        ];

        b.group = ParamGroup::TargetEncoder;
        let target = [
            b.conv("target_encoder.conv1", c.tgt_kernel, c.n_mel, d, false)?,
            b.conv("target_encoder.conv2", c.tgt_kernel, d, d, false)?,
            b.conv("target_encoder.conv3", c.tgt_kernel, d, d, false)?,
        ];

        b.group = ParamGroup::Extractors;
        let extractors = (0..c.n_extractors)
            .map(|i| {
                DecoderLayer::build(
                    &mut b,
                    &format!("extractors.{i}"),
                    d,
                    c.n_heads,
                    c.ffn_kernel,
                    c.ffn_expansion,
                    c.layer_norm_eps,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        b.group = ParamGroup::Other;
        let smoothers = (0..c.n_smoothers)
            .map(|i| {
                DecoderLayer::build(
                    &mut b,
                    &format!("smoothers.{i}"),
                    d,
                    c.n_heads,
                    c.ffn_kernel,
                    c.ffn_expansion,
                    c.layer_norm_eps,
                    false,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = b.linear("projection", d, c.n_mel)?;

        let mut postnet = Vec::with_capacity(c.postnet_layers);
        for i in 0..c.postnet_layers {
            let cin = if i == 0 { c.n_mel } else { d };
            let last = i + 1 == c.postnet_layers;
            let cout = if last { c.n_mel } else { d };
            postnet.push(b.conv(&format!("postnet.{i}"), c.postnet_kernel, cin, cout, last)?);
        }

        Ok(Self {
            config,
            params: store,
            layout: Layout {
                source,
                target,
                extractors,
                smoothers,
                projection,
                postnet,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> FragmentVc<U> {
        FragmentVc {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Starts a differentiable forward pass with every parameter bound.
    pub fn graph(&self) -> Graph<'_, T> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        Graph {
            model: self,
            tape,
            params,
        }
    }

    /// Forward pass without keeping the graph around.
    pub fn infer(&self, source: &Tensor<T>, targets: &[&Tensor<T>]) -> Result<Inference<T>> {
        let mut g = self.graph();
        let out = g.forward(source, targets)?;
        Ok(Inference {
            mel_pre: g.tape.value(out.mel_pre).clone(),
            mel_post: g.tape.value(out.mel_post).clone(),
            attention: out.attention,
        })
    }

    /// Adds gradients collected by [`Graph::backward`] into the store.
    pub fn accumulate_grads(&mut self, graph_grads: GraphGrads<T>) -> Result<()> {
        self.params
            .accumulate_grads(&graph_grads.tape, &graph_grads.params)
    }
}

/// Parameter gradients detached from the model borrow.
pub struct GraphGrads<T: Scalar> {
    tape: Tape<T>,
    params: Vec<Var>,
}

/// One forward/backward pass over a model's parameters.
pub struct Graph<'m, T: Scalar> {
    model: &'m FragmentVc<T>,
    pub tape: Tape<T>,
    params: Vec<Var>,
}

impl<'m, T: Scalar> Graph<'m, T> {
    /// Tape variable bound to a named parameter.
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.model.params.id_of(name).map(|id| self.params[id.index()])
    }

    /// Two linear layers, each followed by ReLU.
    pub fn source_encoder(&mut self, features: &Tensor<T>) -> Result<Var> {
        let cfg = &self.model.config;
        if features.cols()? != cfg.upstream_dim {
            return Err(Error::shape(format!(
                "source features have {} dims, model expects {}",
                features.cols()?,
                cfg.upstream_dim
            )));
        }
        let x = self.tape.constant(features.clone());
        let [l1, l2] = &self.model.layout.source;
        let h = l1.forward(&mut self.tape, &self.params, x)?;
        let h = self.tape.relu(h);
        let h = l2.forward(&mut self.tape, &self.params, h)?;
        Ok(self.tape.relu(h))
    }

    /// Three ReLU convolutions. Each target utterance is encoded on its own
    /// and the results are joined along time, so no convolution window
    /// straddles two utterances.
    pub fn target_encoder(&mut self, mels: &[&Tensor<T>]) -> Result<TargetTaps> {
        if mels.is_empty() {
            return Err(Error::shape("at least one target utterance is required"));
        }
        let n_mel = self.model.config.n_mel;
        let mut taps: [Vec<Var>; 3] = Default::default();
        for mel in mels {
            if mel.cols()? != n_mel {
                return Err(Error::shape(format!(
                    "target mel has {} bins, model expects {n_mel}",
                    mel.cols()?
                )));
            }
            let mut h = self.tape.constant((*mel).clone());
            for (conv, out) in self.model.layout.target.iter().zip(taps.iter_mut()) {
                h = conv.forward(&mut self.tape, &self.params, h)?;
                h = self.tape.relu(h);
                out.push(h);
            }
        }
        let mut join = |v: &[Var]| -> Result<Var> {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                self.tape.concat_rows(v)
            }
        };
        Ok(TargetTaps {
            conv1: join(&taps[0])?,
            conv2: join(&taps[1])?,
            conv3: join(&taps[2])?,
        })
    }

    /// Extractor `index`: self-attention, cross-attention onto `memory`
    /// (with or without the residual path), convolutional feed-forward.
    pub fn extractor(
        &mut self,
        index: usize,
        x: Var,
        memory: Var,
        cross_residual: bool,
    ) -> Result<(Var, Tensor<T>)> {
        let layer = self
            .model
            .layout
            .extractors
            .get(index)
            .ok_or_else(|| Error::shape(format!("no extractor {index}")))?;
        let (y, w) = layer.forward(&mut self.tape, &self.params, x, Some(memory), cross_residual)?;
        Ok((y, w.expect("extractors always cross-attend")))
    }

    pub fn smoother(&mut self, index: usize, x: Var) -> Result<Var> {
        let layer = self
            .model
            .layout
            .smoothers
            .get(index)
            .ok_or_else(|| Error::shape(format!("no smoother {index}")))?;
        Ok(layer.forward(&mut self.tape, &self.params, x, None, true)?.0)
    }

    /// PostNet residual: convolutions with `tanh` between them, none after
    /// the last. The caller adds the result to its input.
    pub fn postnet(&mut self, mel: Var) -> Result<Var> {
        let n = self.model.layout.postnet.len();
        let mut h = mel;
        for (i, conv) in self.model.layout.postnet.iter().enumerate() {
            h = conv.forward(&mut self.tape, &self.params, h)?;
            if i + 1 < n {
                h = self.tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Memory attended by each extractor.
    fn memories(&mut self, taps: TargetTaps) -> Result<Vec<Var>> {
        let cfg = &self.model.config;
        let n = cfg.n_extractors;
        if cfg.no_cross_attention {
            let pooled = self.tape.mean_rows(taps.conv3)?;
            return Ok(vec![pooled; n]);
        }
        if cfg.flat_wiring {
            return Ok(vec![taps.conv3; n]);
        }
        Ok(vec![taps.conv3, taps.conv2, taps.conv1])
    }

    /// Full non-autoregressive pass: output frames follow the source length.
    pub fn forward(&mut self, source: &Tensor<T>, targets: &[&Tensor<T>]) -> Result<ForwardOutput> {
        let taps = self.target_encoder(targets)?;
        let mut h = self.source_encoder(source)?;
        let memories = self.memories(taps)?;
        let keep_first = self.model.config.keep_extractor1_residual;
        let mut attention = AttentionRecord::default();
        for (i, mem) in memories.into_iter().enumerate() {
            let cross_residual = i > 0 || keep_first;
            let (y, w) = self.extractor(i, h, mem, cross_residual)?;
            attention.layers.push(w.cast());
            h = y;
        }
        for i in 0..self.model.layout.smoothers.len() {
            h = self.smoother(i, h)?;
        }
        let mel_pre = self
            .model
            .layout
            .projection
            .forward(&mut self.tape, &self.params, h)?;
        let residual = self.postnet(mel_pre)?;
        let mel_post = self.tape.add(mel_pre, residual)?;
        Ok(ForwardOutput {
            mel_pre,
            mel_post,
            attention,
        })
    }

    /// L1 reconstruction loss on `mel_post`, plus `mel_pre` when `dual_tap`.
    pub fn reconstruction_loss(
        &mut self,
        out: &ForwardOutput,
        ground_truth: &Tensor<T>,
        dual_tap: bool,
    ) -> Result<Var> {
        let gt = self.tape.constant(ground_truth.clone());
        let post = self.tape.l1_loss(out.mel_post, gt)?;
        if !dual_tap {
            return Ok(post);
        }
        let pre = self.tape.l1_loss(out.mel_pre, gt)?;
        self.tape.add(pre, post)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    pub fn into_grads(self) -> GraphGrads<T> {
        GraphGrads {
            tape: self.tape,
            params: self.params,
        }
    }
}
