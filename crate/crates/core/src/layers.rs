//! Named conv / dense layer stacks over a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, Element, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transposed,
}

/// One convolution with its parameter indices in the owning store.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kind: ConvKind,
    pub kernel: usize,
    pub bias: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn add<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: ConvKind,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Result<ConvLayer> {
        let fan_in = in_channels * size * size;
        let shape = match kind {
            ConvKind::Conv => [out_channels, in_channels, size, size],
            ConvKind::Transposed => [in_channels, out_channels, size, size],
        };
        let kernel = store.add_he_uniform(format!("{name}.kernel"), &shape, fan_in, rng)?;
        let bias = store.add_zeros(format!("{name}.bias"), &[out_channels])?;
        Ok(ConvLayer {
            kind,
            kernel,
            bias,
            in_channels,
            out_channels,
            size,
            stride,
            padding: size / 2,
            relu,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        let k = params.get(self.kernel);
        let b = params.get(self.bias);
        let y = match self.kind {
            ConvKind::Conv => tape.conv2d(x, k, b, self.stride, self.padding)?,
            ConvKind::Transposed => tape.conv_transpose2d(x, k, b, self.stride, self.padding)?,
        };
        Ok(if self.relu { tape.relu(y) } else { y })
    }

    pub fn multiply_adds(&self, out_h: usize, out_w: usize) -> usize {
        self.in_channels * self.out_channels * self.size * self.size * out_h * out_w
    }
}

pub fn forward_all<T: Element>(layers: &[ConvLayer], tape: &mut Tape<T>, params: &Bound, mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(tape, params, x)?;
    }
    Ok(x)
}

/// Fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
}

impl DenseLayer {
    pub fn add<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Result<DenseLayer> {
        let weights = store.add_he_uniform(format!("{name}.weights"), &[outputs, inputs], inputs, rng)?;
        let bias = store.add_zeros(format!("{name}.bias"), &[outputs])?;
        Ok(DenseLayer {
            weights,
            bias,
            inputs,
            outputs,
            relu,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        let y = tape.dense(x, params.get(self.weights), params.get(self.bias))?;
        Ok(if self.relu { tape.relu(y) } else { y })
    }
}

/// Stack of dense layers with ReLU between hidden layers and a linear output.
pub fn build_mlp<T: Element>(
    store: &mut ParamStore<T>,
    prefix: &str,
    inputs: usize,
    widths: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut n = inputs;
    for (i, &w) in widths.iter().enumerate() {
        let last = i + 1 == widths.len();
        layers.push(DenseLayer::add(store, &format!("{prefix}.fc{}", i + 1), n, w, !last, rng)?);
        n = w;
    }
    Ok(layers)
}

pub fn mlp_forward<T: Element>(layers: &[DenseLayer], tape: &mut Tape<T>, params: &Bound, mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(tape, params, x)?;
    }
    Ok(x)
}
