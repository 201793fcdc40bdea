use super::kernels::{self, Geom};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: Geom,
        out_channels: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: Geom,
        in_channels: usize,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        /// channels contributed by each input
        widths: Vec<usize>,
        /// product of dims before the channel axis
        outer: usize,
        /// product of dims after the channel axis
        inner: usize,
    },
    Reshape {
        input: Var,
    },
    Permute {
        input: Var,
        axes: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
        mask: Option<Vec<T>>,
        denom: T,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
        denom: T,
    },
    SmoothL1 {
        pred: Var,
        target: Vec<T>,
        mask: Vec<T>,
        denom: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed operations. Backward walks it in exact
/// reverse order, so identical forward passes yield identical gradients.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    scratch: Vec<T>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input value. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        let node = &mut self.nodes[v.0];
        std::mem::replace(&mut node.value, Tensor::scalar(T::zero()))
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Splits a conv input into (batch, channels, h, w); rank 3 means batch 1.
    fn image_dims(&self, op: &'static str, v: Var) -> Result<(bool, usize, usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((false, 1, c, h, w)),
            [b, c, h, w] => Ok((true, b, c, h, w)),
            ref s => Err(Error::shape(op, format!("input must be C×H×W or N×C×H×W, got {s:?}"))),
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batched, b, c, h, w) = self.image_dims("conv2d", input)?;
        let (o, kc, kh, kw) = match *self.shape(kernel) {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            ref s => return Err(Error::shape("conv2d", format!("kernel must be O×C×Kh×Kw, got {s:?}"))),
        };
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c} != kernel input channels {kc}"),
            ));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} != [{o}]", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let out_h = kernels::conv_output_size(h, kh, stride, padding).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel height {kh} exceeds padded height {}", h + 2 * padding))
        })?;
        let out_w = kernels::conv_output_size(w, kw, stride, padding).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel width {kw} exceeds padded width {}", w + 2 * padding))
        })?;
        let geom = Geom {
            channels: c,
            img_h: h,
            img_w: w,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        };
        let in_len = c * h * w;
        let out_len = o * out_h * out_w;
        let mut out = vec![T::zero(); b * out_len];
        let mut cols = std::mem::take(&mut self.scratch);
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let bs = self.value(bias).data();
            for (i, chunk) in out.chunks_mut(out_len).enumerate() {
                kernels::conv_forward(&x[i * in_len..(i + 1) * in_len], k, bs, &geom, o, &mut cols, chunk);
            }
        }
        self.scratch = cols;
        let shape = if batched { vec![b, o, out_h, out_w] } else { vec![o, out_h, out_w] };
        let rg = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                out_channels: o,
            },
            rg,
        ))
    }

    /// Kernel layout is C_in×C_out×Kh×Kw.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batched, b, c, h, w) = self.image_dims("transposed_conv2d", input)?;
        let (kc, o, kh, kw) = match *self.shape(kernel) {
            [kc, o, kh, kw] => (kc, o, kh, kw),
            ref s => {
                return Err(Error::shape(
                    "transposed_conv2d",
                    format!("kernel must be C×O×Kh×Kw, got {s:?}"),
                ))
            }
        };
        if kc != c {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("input channels {c} != kernel input channels {kc}"),
            ));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("bias shape {:?} != [{o}]", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("transposed_conv2d", "stride must be positive"));
        }
        let out_h = kernels::transposed_output_size(h, kh, stride, padding).ok_or_else(|| {
            Error::shape("transposed_conv2d", format!("padding {padding} leaves no output height"))
        })?;
        let out_w = kernels::transposed_output_size(w, kw, stride, padding).ok_or_else(|| {
            Error::shape("transposed_conv2d", format!("padding {padding} leaves no output width"))
        })?;
        let geom = Geom {
            channels: o,
            img_h: out_h,
            img_w: out_w,
            kh,
            kw,
            stride,
            padding,
            out_h: h,
            out_w: w,
        };
        // The forward conv of the output grid must land back on the input grid.
        if kernels::conv_output_size(out_h, kh, stride, padding) != Some(h)
            || kernels::conv_output_size(out_w, kw, stride, padding) != Some(w)
        {
            return Err(Error::shape("transposed_conv2d", "inconsistent stride/padding geometry"));
        }
        let in_len = c * h * w;
        let out_len = o * out_h * out_w;
        let mut out = vec![T::zero(); b * out_len];
        let mut cols = std::mem::take(&mut self.scratch);
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let bs = self.value(bias).data();
            for (i, chunk) in out.chunks_mut(out_len).enumerate() {
                kernels::conv_transpose_forward(
                    &x[i * in_len..(i + 1) * in_len],
                    k,
                    bs,
                    &geom,
                    c,
                    &mut cols,
                    chunk,
                );
            }
        }
        self.scratch = cols;
        let shape = if batched { vec![b, o, out_h, out_w] } else { vec![o, out_h, out_w] };
        let rg = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
                in_channels: c,
            },
            rg,
        ))
    }

    /// Affine map `y = W x + b`; `input` is N or B×N, `weights` M×N.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (batched, b, n) = match *self.shape(input) {
            [n] => (false, 1, n),
            [b, n] => (true, b, n),
            ref s => return Err(Error::shape("dense", format!("input must be N or B×N, got {s:?}"))),
        };
        let (m, wn) = match *self.shape(weights) {
            [m, wn] => (m, wn),
            ref s => return Err(Error::shape("dense", format!("weights must be M×N, got {s:?}"))),
        };
        if wn != n {
            return Err(Error::shape("dense", format!("input width {n} != weight columns {wn}")));
        }
        if self.shape(bias) != [m] {
            return Err(Error::shape("dense", format!("bias shape {:?} != [{m}]", self.shape(bias))));
        }
        let mut out = vec![T::zero(); b * m];
        for row in out.chunks_mut(m) {
            row.copy_from_slice(self.value(bias).data());
        }
        kernels::matmul(
            b,
            n,
            m,
            self.value(input).data(),
            false,
            self.value(weights).data(),
            true,
            T::one(),
            &mut out,
        );
        let shape = if batched { vec![b, m] } else { vec![m] };
        let rg = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dense { input, weights, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        };
        let rg = self.needs(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Concatenates along the channel axis (axis 0 for C×H×W, 1 for N×C×H×W).
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let base = self.shape(first).to_vec();
        let axis = match base.len() {
            3 => 0,
            4 => 1,
            _ => return Err(Error::shape("concat_channels", format!("expected rank 3 or 4, got {base:?}"))),
        };
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let same_rest = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial mismatch: {:?} vs {:?}", s, base),
                ));
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &wd) in inputs.iter().zip(&widths) {
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * wd * inner..(o + 1) * wd * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                widths,
                outer,
                inner,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if axes.len() != in_shape.len()
            || axes.iter().any(|&a| a >= in_shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", format!("axes {axes:?} invalid for {in_shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let data = permute_data(self.value(input).data(), &in_shape, axes);
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute {
                input,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|&v| v * factor).collect(),
        };
        let rg = self.needs(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Scalar `Σ wᵢ xᵢ` with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        if weights.len() != self.value(input).len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(input).len()),
            ));
        }
        let s = self
            .value(input)
            .data()
            .iter()
            .zip(weights)
            .map(|(&x, &w)| x * w)
            .sum();
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let n = target.len();
        let sum: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let denom = T::from_f64(n as f64);
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(sum / denom),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
                mask: None,
                denom,
            },
            rg,
        ))
    }

    /// Squared error averaged over entries whose mask is non-zero; 0 when
    /// the mask is empty.
    pub fn masked_mse_loss(&mut self, pred: Var, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() || target.shape() != mask.shape() {
            return Err(Error::shape(
                "masked_mse_loss",
                format!(
                    "prediction {:?}, target {:?}, mask {:?}",
                    self.shape(pred),
                    target.shape(),
                    mask.shape()
                ),
            ));
        }
        let active: T = mask.data().iter().copied().sum();
        let sum: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((&p, &t), &m)| m * (p - t) * (p - t))
            .sum();
        let denom = if active > T::zero() { active } else { T::one() };
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(sum / denom),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
                mask: Some(mask.data().to_vec()),
                denom,
            },
            rg,
        ))
    }

    /// Weighted mean of `-log softmax(logits)[label]` over rows of an A×C
    /// logit matrix. Rows with zero weight are ignored.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let (rows, classes) = match *self.shape(logits) {
            [a, c] => (a, c),
            ref s => return Err(Error::shape("softmax_cross_entropy", format!("logits must be A×C, got {s:?}"))),
        };
        if labels.len() != rows || weights.len() != rows {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{rows} rows, {} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = T::zero();
        let mut wsum = T::zero();
        for r in 0..rows {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p = *p / z;
            }
            if weights[r] != T::zero() {
                let nll = -(row[labels[r]] - max - z.ln());
                total += weights[r] * nll;
                wsum += weights[r];
            }
        }
        let denom = if wsum > T::zero() { wsum } else { T::one() };
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
                denom,
            },
            rg,
        ))
    }

    /// Huber loss with transition at 1, averaged over unmasked entries.
    pub fn smooth_l1_loss(&mut self, pred: Var, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() || target.shape() != mask.shape() {
            return Err(Error::shape(
                "smooth_l1_loss",
                format!(
                    "prediction {:?}, target {:?}, mask {:?}",
                    self.shape(pred),
                    target.shape(),
                    mask.shape()
                ),
            ));
        }
        let half = T::from_f64(0.5);
        let mut sum = T::zero();
        let mut active = T::zero();
        for ((&p, &t), &m) in self.value(pred).data().iter().zip(target.data()).zip(mask.data()) {
            if m == T::zero() {
                continue;
            }
            let d = (p - t).abs();
            sum += m * if d < T::one() { half * d * d } else { d - half };
            active += m;
        }
        let denom = if active > T::zero() { active } else { T::one() };
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(sum / denom),
            Op::SmoothL1 {
                pred,
                target: target.data().to_vec(),
                mask: mask.data().to_vec(),
                denom,
            },
            rg,
        ))
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(node.grad.get_or_insert_with(|| vec![T::zero(); n]))
    }

    /// Reverse pass from a scalar output. Gradients accumulate into every
    /// node that requires them.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.shape(output)),
            ));
        }
        if !self.value(output).is_finite() {
            return Err(Error::NonFinite {
                context: "loss value".into(),
            });
        }
        if !self.needs(output) {
            return Ok(());
        }
        self.nodes[output.0].grad = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_op(&op, &grad, idx)?;
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op<T>, g: &[T], idx: usize) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                out_channels,
            } => {
                let batch = self.value(*input).len() / (geom.channels * geom.img_h * geom.img_w);
                let in_len = geom.channels * geom.img_h * geom.img_w;
                let out_len = out_channels * geom.out_h * geom.out_w;
                let mut gi = self.needs(*input).then(|| vec![T::zero(); batch * in_len]);
                let mut gk = self.needs(*kernel).then(|| vec![T::zero(); self.value(*kernel).len()]);
                let mut gb = self.needs(*bias).then(|| vec![T::zero(); *out_channels]);
                let mut cols = std::mem::take(&mut self.scratch);
                {
                    let x = self.value(*input).data();
                    let k = self.value(*kernel).data();
                    for s in 0..batch {
                        kernels::conv_backward(
                            &x[s * in_len..(s + 1) * in_len],
                            k,
                            geom,
                            *out_channels,
                            &g[s * out_len..(s + 1) * out_len],
                            &mut cols,
                            gi.as_mut().map(|v| &mut v[s * in_len..(s + 1) * in_len]),
                            gk.as_deref_mut(),
                            gb.as_deref_mut(),
                        );
                    }
                }
                self.scratch = cols;
                self.accumulate(*input, gi);
                self.accumulate(*kernel, gk);
                self.accumulate(*bias, gb);
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
                in_channels,
            } => {
                let in_len = in_channels * geom.out_h * geom.out_w;
                let out_len = geom.channels * geom.img_h * geom.img_w;
                let batch = self.value(*input).len() / in_len;
                let mut gi = self.needs(*input).then(|| vec![T::zero(); batch * in_len]);
                let mut gk = self.needs(*kernel).then(|| vec![T::zero(); self.value(*kernel).len()]);
                let mut gb = self.needs(*bias).then(|| vec![T::zero(); geom.channels]);
                let mut cols = std::mem::take(&mut self.scratch);
                {
                    let x = self.value(*input).data();
                    let k = self.value(*kernel).data();
                    for s in 0..batch {
                        kernels::conv_transpose_backward(
                            &x[s * in_len..(s + 1) * in_len],
                            k,
                            geom,
                            *in_channels,
                            &g[s * out_len..(s + 1) * out_len],
                            &mut cols,
                            gi.as_mut().map(|v| &mut v[s * in_len..(s + 1) * in_len]),
                            gk.as_deref_mut(),
                            gb.as_deref_mut(),
                        );
                    }
                }
                self.scratch = cols;
                self.accumulate(*input, gi);
                self.accumulate(*kernel, gk);
                self.accumulate(*bias, gb);
            }
            Op::Dense { input, weights, bias } => {
                let (m, n) = {
                    let s = self.shape(*weights);
                    (s[0], s[1])
                };
                let b = self.value(*input).len() / n;
                let gi = self.needs(*input).then(|| {
                    let mut gi = vec![T::zero(); b * n];
                    kernels::matmul(b, m, n, g, false, self.value(*weights).data(), false, T::zero(), &mut gi);
                    gi
                });
                let gw = self.needs(*weights).then(|| {
                    let mut gw = vec![T::zero(); m * n];
                    kernels::matmul(m, b, n, g, true, self.value(*input).data(), false, T::zero(), &mut gw);
                    gw
                });
                let gb = self.needs(*bias).then(|| {
                    let mut gb = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    gb
                });
                self.accumulate(*input, gi);
                self.accumulate(*weights, gw);
                self.accumulate(*bias, gb);
            }
            Op::Relu { input } => {
                let out = &self.nodes[idx].value;
                let gi: Vec<T> = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(*input, Some(gi));
            }
            Op::Concat {
                inputs,
                widths,
                outer,
                inner,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &wd) in inputs.iter().zip(widths) {
                    if self.needs(v) {
                        let mut gi = Vec::with_capacity(outer * wd * inner);
                        for o in 0..*outer {
                            let start = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[start..start + wd * inner]);
                        }
                        self.accumulate(v, Some(gi));
                    }
                    offset += wd;
                }
            }
            Op::Reshape { input } => self.accumulate(*input, Some(g.to_vec())),
            Op::Permute { input, axes } => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gi = permute_data(g, &out_shape, &inverse);
                self.accumulate(*input, Some(gi));
            }
            Op::Add { a, b } => {
                self.accumulate(*a, Some(g.to_vec()));
                self.accumulate(*b, Some(g.to_vec()));
            }
            Op::Scale { input, factor } => {
                let gi = g.iter().map(|&v| v * *factor).collect();
                self.accumulate(*input, Some(gi));
            }
            Op::WeightedSum { input, weights } => {
                let gi = weights.iter().map(|&w| w * g[0]).collect();
                self.accumulate(*input, Some(gi));
            }
            Op::Mse {
                pred,
                target,
                mask,
                denom,
            } => {
                let two = T::from_f64(2.0) * g[0] / *denom;
                let p = self.value(*pred).data();
                let gi: Vec<T> = match mask {
                    None => p.iter().zip(target).map(|(&a, &t)| two * (a - t)).collect(),
                    Some(m) => p
                        .iter()
                        .zip(target)
                        .zip(m)
                        .map(|((&a, &t), &mv)| two * mv * (a - t))
                        .collect(),
                };
                self.accumulate(*pred, Some(gi));
            }
            Op::SoftmaxCe {
                logits,
                labels,
                weights,
                probs,
                denom,
            } => {
                let classes = probs.len() / labels.len().max(1);
                let mut gi = vec![T::zero(); probs.len()];
                for (r, (&label, &w)) in labels.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let scale = g[0] * w / *denom;
                    for c in 0..classes {
                        let ind = if c == label { T::one() } else { T::zero() };
                        gi[r * classes + c] = scale * (probs[r * classes + c] - ind);
                    }
                }
                self.accumulate(*logits, Some(gi));
            }
            Op::SmoothL1 {
                pred,
                target,
                mask,
                denom,
            } => {
                let p = self.value(*pred).data();
                let gi: Vec<T> = p
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&a, &t), &m)| {
                        if m == T::zero() {
                            return T::zero();
                        }
                        let d = a - t;
                        let slope = if d.abs() < T::one() { d } else { d.signum() };
                        g[0] * m * slope / *denom
                    })
                    .collect();
                self.accumulate(*pred, Some(gi));
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, grad: Option<Vec<T>>) {
        let Some(grad) = grad else { return };
        if let Some(buf) = self.grad_buf(v) {
            for (a, b) in buf.iter_mut().zip(grad) {
                *a += b;
            }
        }
    }
}

fn permute_data<T: Copy>(data: &[T], in_shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sum_of_ones_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 4, 4], 1.0));
        let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_strided_padded_shape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 4, 4], 1.0));
        let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv_reports_offending_dimension() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, k, b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("input channels 2"), "{err}");
        let k = tape.constant(Tensor::zeros(&[1, 2, 7, 3]));
        let err = tape.conv2d(x, k, b, 1, 1).unwrap_err().to_string();
        assert!(err.contains("kernel height 7"), "{err}");
    }

    #[test]
    fn transposed_copies_into_blocks() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv_transpose2d(x, k, b, 2, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 4]);
        let expect = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(tape.value(y).data(), &expect);
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1.0, -2.0, 3.0]));
        let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let y = tape.dense(x, eye, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);

        let w0 = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(t(&[2], &[0.5, -0.5]));
        let y = tape.dense(x, w0, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -0.5]);

        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(tape.dense(x, bad, b).is_err());
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = tape.constant(t(&[2], &[-3.0, -0.1]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_single_is_identity_and_shapes_add() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64));
        let c = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.value(c), tape.value(a));
        let b = tape.constant(Tensor::zeros(&[4, 3, 3]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[6, 3, 3]);
        let bad = tape.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(tape.concat_channels(&[a, bad]).is_err());
    }

    #[test]
    fn concat_routes_gradient_slices() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 2, 2]), true);
        let b = tape.leaf(Tensor::zeros(&[2, 2, 2]), true);
        let c = tape.concat_channels(&[a, b]).unwrap();
        let w: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let s = tape.weighted_sum(c, &w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &w[..4]);
        assert_eq!(tape.grad(b).unwrap(), &w[4..]);
    }

    #[test]
    fn loss_values() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let l = tape.mse_loss(p, &t(&[4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        let l = tape.mse_loss(p, &t(&[4], &[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(tape.value(l).data()[0], 1.0);
        assert!(tape.mse_loss(p, &t(&[2], &[0.0, 1.0])).is_err());

        let logits = tape.constant(Tensor::zeros(&[3, 5]));
        let l = tape.softmax_cross_entropy(logits, &[0, 2, 4], &[1.0; 3]).unwrap();
        assert!((tape.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[0, 5, 1], &[1.0; 3]),
            Err(Error::LabelOutOfRange { label: 5, classes: 5 })
        ));

        let p = tape.constant(t(&[2], &[0.5, 2.0]));
        let l = tape
            .smooth_l1_loss(p, &t(&[2], &[0.0, 0.0]), &t(&[2], &[1.0, 0.0]))
            .unwrap();
        assert_eq!(tape.value(l).data()[0], 0.125);
        let l = tape
            .smooth_l1_loss(p, &t(&[2], &[0.0, 0.0]), &t(&[2], &[0.0, 1.0]))
            .unwrap();
        assert_eq!(tape.value(l).data()[0], 1.5);
        let l = tape
            .smooth_l1_loss(p, &t(&[2], &[0.0, 0.0]), &t(&[2], &[0.0, 0.0]))
            .unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for m in 0..8 {
            let mut tape = Tape::<f64>::new();
            let mut row = vec![0.0; 4];
            row[1] = m as f64 * 0.5;
            let logits = tape.constant(t(&[1, 4], &row));
            let l = tape.softmax_cross_entropy(logits, &[1], &[1.0]).unwrap();
            let v = tape.value(l).data()[0];
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn permute_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 2, 3]);
        // y[k][i][j] == x[i][j][k]
        assert_eq!(tape.value(y).data()[1 * 6 + 1 * 3 + 2], tape.value(x).data()[1 * 12 + 2 * 4 + 1]);
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3]), true);
        assert!(tape.backward(x).is_err());
    }
}
