//! Neural building blocks. Blocks only hold [`ParamId`]s into a
//! [`ParamStore`]; a forward pass binds the store to a graph and threads the
//! resulting [`Bound`] through each block.

use rand::Rng;

use crate::{Bound, Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};

/// Slope of the negative side of every leaky-ReLU in the models.
pub const LEAKY_RELU_ALPHA: f64 = 0.1;

/// Uniform samples in `±1/√fan_in`.
pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches sample count")
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, &[in_features, out_features], in_features))?;
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[out_features], in_features))?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    /// `x: [N, in] → [N, out]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.weight))?;
        g.add_row(y, p.get(self.bias))
    }
}

/// LSTM cell with gate blocks laid out as `[input, forget, cell, output]`
/// along the `4·hidden` axis of `W`, `U` and `b`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        let gates = 4 * hidden_size;
        let w = store.add(format!("{name}.w"), uniform_init(rng, &[input_size, gates], input_size))?;
        let u = store.add(format!("{name}.u"), uniform_init(rng, &[hidden_size, gates], hidden_size))?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, &[gates], hidden_size))?;
        Ok(LstmCell {
            w,
            u,
            b,
            input_size,
            hidden_size,
        })
    }

    /// `x·W + b`, the input half of the gate pre-activations. Useful when
    /// the same input is fed at every step.
    pub fn project_input(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_size {
            return Err(TensorError::dim("lstm input", s, &[self.input_size]));
        }
        let xw = g.matmul(x, p.get(self.w))?;
        g.add_row(xw, p.get(self.b))
    }

    /// One recurrence step on a batch: `x: [N, in]`, `h, c: [N, hidden]`.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xw = self.project_input(g, p, x)?;
        self.step_projected(g, p, xw, h, c)
    }

    pub fn step_projected(&self, g: &mut Graph, p: &Bound, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden_size;
        for v in [h, c] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != hs || s[0] != g.shape(xw)[0] {
                return Err(TensorError::dim("lstm state", s, &[g.shape(xw)[0], hs]));
            }
        }
        let hu = g.matmul(h, p.get(self.u))?;
        let z = g.add(xw, hu)?;
        let zi = g.slice_last(z, 0, hs)?;
        let zf = g.slice_last(z, hs, hs)?;
        let zg = g.slice_last(z, 2 * hs, hs)?;
        let zo = g.slice_last(z, 3 * hs, hs)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Zero padding added on each side, per axis.
    pub padding: (usize, usize),
}

impl ConvLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(rng, &[out_channels, in_channels, kernel.0, kernel.1], fan_in),
        )?;
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[out_channels], fan_in))?;
        Ok(ConvLayer {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            padding,
        })
    }

    /// Output spatial extent for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding.0, w + 2 * self.padding.1);
        if self.kernel_h > ph || self.kernel_w > pw {
            return Err(TensorError::dim("conv kernel exceeds padded input", &[h, w], &[self.kernel_h, self.kernel_w]));
        }
        Ok((ph - self.kernel_h + 1, pw - self.kernel_w + 1))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.get(self.weight), p.get(self.bias), self.padding)
    }
}

pub fn max_pool2d(g: &mut Graph, x: Var, pool_h: usize, pool_w: usize) -> Result<Var> {
    g.max_pool2d(x, pool_h, pool_w)
}

pub fn softmax(g: &mut Graph, logits: Var) -> Var {
    g.softmax(logits)
}

pub fn leaky_relu(g: &mut Graph, x: Var, alpha: f64) -> Var {
    g.leaky_relu(x, alpha)
}
