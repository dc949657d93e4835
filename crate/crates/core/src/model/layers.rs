//! Building blocks: linear and convolution layers, multi-head attention and
//! the extractor/smoother decoder layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamGroup, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};

pub(crate) fn xavier<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Registers parameters under a common name prefix and group.
pub(crate) struct Builder<'a, T: Scalar> {
    pub store: &'a mut ParameterStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, value: Tensor<T>) -> Result<ParamId> {
        self.store.register(name, self.group, value)
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let mut l = self.linear_no_bias(name, din, dout)?;
        l.bias = Some(self.add(format!("{name}.bias"), Tensor::zeros([dout]))?);
        Ok(l)
    }

    pub fn linear_no_bias(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let w = xavier(self.rng, &[din, dout], din, dout);
        Ok(Linear {
            weight: self.add(format!("{name}.weight"), w)?,
            bias: None,
        })
    }

    pub fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, zero: bool) -> Result<Conv> {
        let kernel = if zero {
            Tensor::zeros([k, cin, cout])
        } else {
            xavier(self.rng, &[k, cin, cout], k * cin, k * cout)
        };
        Ok(Conv {
            kernel: self.add(format!("{name}.kernel"), kernel)?,
            bias: self.add(format!("{name}.bias"), Tensor::zeros([cout]))?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, d: usize, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.add(format!("{name}.gain"), Tensor::full([d], T::one()))?,
            bias: self.add(format!("{name}.bias"), Tensor::zeros([d]))?,
            eps,
        })
    }

    pub fn attention(&mut self, name: &str, d: usize, n_heads: usize) -> Result<MultiHeadAttention> {
        Ok(MultiHeadAttention {
            query: self.linear(&format!("{name}.query"), d, d)?,
            // A key bias shifts every score in a row equally, which softmax
            // ignores, so it would never receive a gradient.
            key: self.linear_no_bias(&format!("{name}.key"), d, d)?,
            value: self.linear(&format!("{name}.value"), d, d)?,
            output: self.linear(&format!("{name}.output"), d, d)?,
            n_heads,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight.index()])?;
        match self.bias {
            Some(b) => tape.add_bias(y, p[b.index()]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.conv1d(x, p[self.kernel.index()], p[self.bias.index()])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain.index()], p[self.bias.index()], self.eps)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    /// Scaled dot-product attention per head, scale `1/sqrt(d/H)`. Returns the
    /// projected output and the `H × Tq × Tk` softmax weights.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        q_in: Var,
        kv_in: Var,
    ) -> Result<(Var, Tensor<T>)> {
        let q = self.query.forward(tape, p, q_in)?;
        let k = self.key.forward(tape, p, kv_in)?;
        let v = self.value.forward(tape, p, kv_in)?;
        let d = tape.shape(q)[1];
        let (tq, tk) = (tape.shape(q)[0], tape.shape(k)[0]);
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads * tq * tk);
        for h in 0..self.n_heads {
            let qh = tape.col_slice(q, h * dh, dh)?;
            let kh = tape.col_slice(k, h * dh, dh)?;
            let vh = tape.col_slice(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores)?;
            weights.extend_from_slice(tape.value(attn).data());
            heads.push(tape.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.output.forward(tape, p, joined)?;
        Ok((out, Tensor::new([self.n_heads, tq, tk], weights)?))
    }
}

/// Convolutional feed-forward: `conv(d→e·d, k) → ReLU → conv(e·d→d, 1)`.
#[derive(Clone, Debug)]
pub(crate) struct ConvFeedForward {
    pub expand: Conv,
    pub contract: Conv,
}

impl ConvFeedForward {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.expand.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.contract.forward(tape, p, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CrossAttention {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
}

/// Post-norm decoder layer. With `cross` it is an extractor
/// (self-attention → cross-attention → feed-forward); without, a smoother.
#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross: Option<CrossAttention>,
    pub ffn: ConvFeedForward,
    pub ffn_norm: LayerNorm,
}

impl DecoderLayer {
    pub fn build<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        d: usize,
        n_heads: usize,
        ffn_kernel: usize,
        expansion: usize,
        eps: f64,
        with_cross: bool,
    ) -> Result<Self> {
        let self_attention = b.attention(&format!("{name}.self_attn"), d, n_heads)?;
        let self_norm = b.layer_norm(&format!("{name}.self_norm"), d, eps)?;
        let cross = if with_cross {
            Some(CrossAttention {
                attention: b.attention(&format!("{name}.cross_attn"), d, n_heads)?,
                norm: b.layer_norm(&format!("{name}.cross_norm"), d, eps)?,
            })
        } else {
            None
        };
        let ffn = ConvFeedForward {
            expand: b.conv(&format!("{name}.ffn.expand"), ffn_kernel, d, expansion * d, false)?,
            contract: b.conv(&format!("{name}.ffn.contract"), 1, expansion * d, d, false)?,
        };
        let ffn_norm = b.layer_norm(&format!("{name}.ffn_norm"), d, eps)?;
        Ok(Self {
            self_attention,
            self_norm,
            cross,
            ffn,
            ffn_norm,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        memory: Option<Var>,
        cross_residual: bool,
    ) -> Result<(Var, Option<Tensor<T>>)> {
        let (a, _) = self.self_attention.forward(tape, p, x, x)?;
        let h = tape.add(a, x)?;
        let mut h = self.self_norm.forward(tape, p, h)?;

        let mut weights = None;
        if let (Some(cross), Some(mem)) = (&self.cross, memory) {
            let (c, w) = cross.attention.forward(tape, p, h, mem)?;
            let c = if cross_residual { tape.add(c, h)? } else { c };
            h = cross.norm.forward(tape, p, c)?;
            weights = Some(w);
        }

        let f = self.ffn.forward(tape, p, h)?;
        let f = tape.add(f, h)?;
        let out = self.ffn_norm.forward(tape, p, f)?;
        Ok((out, weights))
    }
}
