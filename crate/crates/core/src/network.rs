//! Fully connected residual network: an input layer `S`, a chain of residual
//! blocks `X_{l+1} = X_l + F(X_l, W_l)` and an output layer `T`, trained with
//! softmax cross-entropy.
//!
//! Each block is `F(X) = act(X·W1 + b1)·W2 + b2`, two weight layers per block.
//! Forward passes record a [`ForwardTape`] that the matching backward pass
//! consumes to produce the input cotangent and all parameter gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Nonlinearity inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    /// Makes the whole network affine; used to check gradients exactly.
    Identity,
}

impl Activation {
    pub fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Tanh => x.tanh_fwd(),
            Activation::Identity => x.clone(),
        }
    }

    pub fn backward(self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Tanh => x.tanh_bwd(upstream),
            Activation::Identity => {
                if x.shape() != upstream.shape() {
                    return Err(Error::Shape {
                        op: "identity_bwd",
                        left: x.shape(),
                        right: upstream.shape(),
                    });
                }
                Ok(upstream.clone())
            }
        }
    }
}

/// `x ↦ x·weight + bias` with `weight: in x out` and `bias: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(inputs, outputs),
            bias: Tensor::zeros(1, outputs),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let a = libm::sqrt(6.0 / (inputs + outputs) as f64);
        Ok(Self {
            weight: rng.uniform(inputs, outputs, -a, a)?,
            bias: Tensor::zeros(1, outputs),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    /// Returns the input cotangent and the parameter gradients.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<(Tensor, Affine)> {
        let grads = Affine {
            weight: x.t_matmul(upstream)?,
            bias: upstream.sum_rows(),
        };
        Ok((upstream.matmul_t(&self.weight)?, grads))
    }

    pub fn descend(&mut self, grad: &Affine, lr: f64) -> Result<()> {
        self.weight.axpy(-lr, &grad.weight)?;
        self.bias.axpy(-lr, &grad.bias)
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// Parameters `W_l = (w1, b1, w2, b2)` of one residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl BlockParams {
    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(width, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, width),
            b2: Tensor::zeros(1, width),
        }
    }

    pub fn glorot(width: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let inner = Affine::glorot(width, hidden, rng)?;
        let outer = Affine::glorot(hidden, width, rng)?;
        Ok(Self {
            w1: inner.weight,
            b1: inner.bias,
            w2: outer.weight,
            b2: outer.bias,
        })
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn descend(&mut self, grad: &BlockParams, lr: f64) -> Result<()> {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            p.axpy(-lr, g)?;
        }
        Ok(())
    }

    /// Scales the residual branch output, i.e. `F ↦ factor · F`.
    pub fn scale_branch(&mut self, factor: f64) {
        self.w2 = self.w2.scale(factor);
        self.b2 = self.b2.scale(factor);
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// What [`block_vjp`] needs from the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCache {
    pub input: Tensor,
    pub pre: Tensor,
    pub hidden: Tensor,
}

pub fn block_forward(
    x: &Tensor,
    p: &BlockParams,
    activation: Activation,
) -> Result<(Tensor, BlockCache)> {
    if x.cols() != p.width() {
        return Err(Error::Shape {
            op: "block_forward",
            left: x.shape(),
            right: p.w1.shape(),
        });
    }
    let pre = x.matmul(&p.w1)?.add_row(&p.b1)?;
    let hidden = activation.forward(&pre);
    let branch = hidden.matmul(&p.w2)?.add_row(&p.b2)?;
    let out = x.add(&branch)?;
    Ok((
        out,
        BlockCache {
            input: x.clone(),
            pre,
            hidden,
        },
    ))
}

/// Reverse mode of [`block_forward`]: `P_l = P_{l+1} + P_{l+1}·∂F/∂X` together
/// with `P_{l+1}·∂F/∂W`.
pub fn block_vjp(
    cache: &BlockCache,
    p: &BlockParams,
    activation: Activation,
    p_next: &Tensor,
) -> Result<(Tensor, BlockParams)> {
    if p_next.shape() != cache.input.shape() {
        return Err(Error::Shape {
            op: "block_vjp",
            left: cache.input.shape(),
            right: p_next.shape(),
        });
    }
    if cache.pre.cols() != p.hidden() || cache.input.cols() != p.width() {
        return Err(Error::Shape {
            op: "block_vjp(cache)",
            left: cache.pre.shape(),
            right: p.w1.shape(),
        });
    }
    let w2 = cache.hidden.t_matmul(p_next)?;
    let b2 = p_next.sum_rows();
    let d_hidden = p_next.matmul_t(&p.w2)?;
    let d_pre = activation.backward(&cache.pre, &d_hidden)?;
    let w1 = cache.input.t_matmul(&d_pre)?;
    let b1 = d_pre.sum_rows();
    let mut p_prev = d_pre.matmul_t(&p.w1)?;
    p_prev.axpy(1.0, p_next)?;
    Ok((p_prev, BlockParams { w1, b1, w2, b2 }))
}

/// Borrowed view of a contiguous piece of a network: optional input layer,
/// a run of blocks, optional output layer.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    pub input: Option<&'a Affine>,
    pub blocks: &'a [BlockParams],
    pub output: Option<&'a Affine>,
    pub activation: Activation,
}

/// Trajectory `{X_l}` of one forward pass over a [`Segment`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ForwardTape {
    /// Raw input, present iff the input layer was applied.
    pub raw: Option<Tensor>,
    pub blocks: Vec<BlockCache>,
    /// Features fed to the output layer, present iff it was applied.
    pub features: Option<Tensor>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Parameter gradients for a [`Segment`], shaped like its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub input: Option<Affine>,
    pub blocks: Vec<BlockParams>,
    pub output: Option<Affine>,
}

impl Grads {
    /// Every gradient tensor in a fixed order: input layer, blocks, output layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(a) = &self.input {
            out.push(&a.weight);
            out.push(&a.bias);
        }
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        if let Some(a) = &self.output {
            out.push(&a.weight);
            out.push(&a.bias);
        }
        out
    }
}

impl<'a> Segment<'a> {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardTape)> {
        let mut tape = ForwardTape::default();
        let mut cur = match self.input {
            Some(s) => {
                if x.cols() != s.inputs() {
                    return Err(Error::Shape {
                        op: "input_layer",
                        left: x.shape(),
                        right: s.weight.shape(),
                    });
                }
                tape.raw = Some(x.clone());
                s.forward(x)?
            }
            None => x.clone(),
        };
        tape.blocks.reserve(self.blocks.len());
        for p in self.blocks {
            let (next, cache) = block_forward(&cur, p, self.activation)?;
            tape.blocks.push(cache);
            cur = next;
        }
        if let Some(t) = self.output {
            if cur.cols() != t.inputs() {
                return Err(Error::Shape {
                    op: "output_layer",
                    left: cur.shape(),
                    right: t.weight.shape(),
                });
            }
            let logits = t.forward(&cur)?;
            tape.features = Some(cur);
            cur = logits;
        }
        Ok((cur, tape))
    }

    /// Propagates `upstream` (cotangent of the segment output) back to the
    /// segment input; returns that cotangent and the parameter gradients.
    pub fn backward(&self, tape: &ForwardTape, upstream: &Tensor) -> Result<(Tensor, Grads)> {
        if tape.blocks.len() != self.blocks.len()
            || tape.raw.is_some() != self.input.is_some()
            || tape.features.is_some() != self.output.is_some()
        {
            return Err(Error::Shape {
                op: "segment_backward(tape)",
                left: (tape.blocks.len(), 0),
                right: (self.blocks.len(), 0),
            });
        }
        let mut cot = upstream.clone();
        let output = match (self.output, &tape.features) {
            (Some(t), Some(features)) => {
                let (d, g) = t.backward(features, &cot)?;
                cot = d;
                Some(g)
            }
            _ => None,
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (p, cache) in self.blocks.iter().zip(&tape.blocks).rev() {
            let (d, g) = block_vjp(cache, p, self.activation, &cot)?;
            blocks.push(g);
            cot = d;
        }
        blocks.reverse();
        let input = match (self.input, &tape.raw) {
            (Some(s), Some(raw)) => {
                let (d, g) = s.backward(raw, &cot)?;
                cot = d;
                Some(g)
            }
            _ => None,
        };
        Ok((
            cot,
            Grads {
                input,
                blocks,
                output,
            },
        ))
    }
}

/// Applies one gradient-descent step to borrowed parameter pieces.
pub fn descend(
    input: Option<&mut Affine>,
    blocks: &mut [BlockParams],
    output: Option<&mut Affine>,
    grads: &Grads,
    lr: f64,
) -> Result<()> {
    if let (Some(p), Some(g)) = (input, &grads.input) {
        p.descend(g, lr)?;
    }
    for (p, g) in blocks.iter_mut().zip(&grads.blocks) {
        p.descend(g, lr)?;
    }
    if let (Some(p), Some(g)) = (output, &grads.output) {
        p.descend(g, lr)?;
    }
    Ok(())
}

/// Network shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub inputs: usize,
    pub width: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub classes: usize,
}

impl NetDims {
    /// The 60-block toy classifier: 2-D points, three classes, width and
    /// hidden size 8.
    pub fn toy() -> Self {
        Self {
            inputs: 2,
            width: 8,
            hidden: 8,
            blocks: 60,
            classes: 3,
        }
    }
}

/// Multipliers applied on top of Glorot initialisation: `input` scales the
/// weights of `S`, `branch` the second layer of every residual branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitGains {
    pub input: f64,
    pub branch: f64,
}

impl InitGains {
    pub const UNIT: Self = Self {
        input: 1.0,
        branch: 1.0,
    };

    /// For the toy classifier. Points in `[−1, 1]²` barely reach the
    /// nonlinear range of `tanh` at unit gain, and sixty unit-scale branches
    /// make full-batch gradient descent at step 0.1 diverge.
    pub const TOY: Self = Self {
        input: 8.0,
        branch: 0.1,
    };
}

impl Default for InitGains {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Everything needed to draw a fresh network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetSpec {
    pub dims: NetDims,
    pub activation: Activation,
    pub gains: InitGains,
}

impl NetSpec {
    pub fn toy() -> Self {
        Self {
            dims: NetDims::toy(),
            activation: Activation::Tanh,
            gains: InitGains::TOY,
        }
    }

    pub fn with_blocks(self, blocks: usize) -> Self {
        Self {
            dims: NetDims {
                blocks,
                ..self.dims
            },
            ..self
        }
    }

    pub fn build(&self, rng: &mut Rng) -> Result<ResidualNet> {
        let mut net = ResidualNet::random(self.dims, self.activation, rng)?;
        net.input.weight = net.input.weight.scale(self.gains.input);
        for b in &mut net.blocks {
            b.scale_branch(self.gains.branch);
        }
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualNet {
    pub input: Affine,
    pub blocks: Vec<BlockParams>,
    pub output: Affine,
    pub activation: Activation,
}

impl ResidualNet {
    pub fn random(dims: NetDims, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let input = Affine::glorot(dims.inputs, dims.width, rng)?;
        let blocks = (0..dims.blocks)
            .map(|_| BlockParams::glorot(dims.width, dims.hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Affine::glorot(dims.width, dims.classes, rng)?;
        Ok(Self {
            input,
            blocks,
            output,
            activation,
        })
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            inputs: self.input.inputs(),
            width: self.input.outputs(),
            hidden: self.blocks.first().map_or(0, BlockParams::hidden),
            blocks: self.blocks.len(),
            classes: self.output.outputs(),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Blocks `[from, to)`, with `S` iff `from == 0` and `T` iff `to == L`.
    pub fn segment(&self, from: usize, to: usize) -> Result<Segment<'_>> {
        let len = self.blocks.len();
        if from > to || to > len {
            return Err(Error::Range { from, to, len });
        }
        Ok(Segment {
            input: (from == 0).then_some(&self.input),
            blocks: &self.blocks[from..to],
            output: (to == len).then_some(&self.output),
            activation: self.activation,
        })
    }

    pub fn forward(&self, x: &Tensor, from: usize, to: usize) -> Result<(Tensor, ForwardTape)> {
        self.segment(from, to)?.forward(x)
    }

    pub fn backward(
        &self,
        from: usize,
        to: usize,
        tape: &ForwardTape,
        upstream: &Tensor,
    ) -> Result<(Tensor, Grads)> {
        self.segment(from, to)?.backward(tape, upstream)
    }

    /// Logits of the full serial forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, 0, self.depth())?.0)
    }

    pub fn descend(&mut self, from: usize, grads: &Grads, lr: f64) -> Result<()> {
        let to = from + grads.blocks.len();
        let len = self.blocks.len();
        if to > len {
            return Err(Error::Range { from, to, len });
        }
        descend(
            grads.input.as_ref().and(Some(&mut self.input)),
            &mut self.blocks[from..to],
            grads.output.as_ref().and(Some(&mut self.output)),
            grads,
            lr,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.input.is_finite()
            && self.output.is_finite()
            && self.blocks.iter().all(BlockParams::is_finite)
    }

    /// Every parameter tensor in the order used by [`Grads::tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = alloc::vec![&self.input.weight, &self.input.bias];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = alloc::vec![&mut self.input.weight, &mut self.input.bias];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn loss_phi(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "loss_phi",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut grad = Tensor::zeros(n, c);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::Label { label, classes: c });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - max)).sum();
        let log_sum = libm::log(sum);
        total += log_sum + max - row[label];
        for (j, &z) in row.iter().enumerate() {
            let p = libm::exp(z - max) / sum;
            let target = if j == label { 1.0 } else { 0.0 };
            grad.set(r, j, (p - target) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

/// One full-batch gradient-descent step on every parameter; returns the
/// loss before the step.
pub fn serial_train_step(
    net: &mut ResidualNet,
    x: &Tensor,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    if !(lr >= 0.0) {
        return Err(Error::Config(alloc::format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    let depth = net.depth();
    let (logits, tape) = net.forward(x, 0, depth)?;
    let (loss, grad) = loss_phi(&logits, labels)?;
    let (_, grads) = net.backward(0, depth, &tape, &grad)?;
    net.descend(0, &grads, lr)?;
    Ok(loss)
}

/// Argmax-of-logits match rate; ties go to the lowest class index.
pub fn accuracy(net: &ResidualNet, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = net.predict(x)?;
    Ok(accuracy_of_logits(&logits, labels))
}

pub fn accuracy_of_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &label)| argmax(logits.row(r)) == label)
        .count();
    hits as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_dims() -> NetDims {
        NetDims {
            inputs: 2,
            width: 4,
            hidden: 4,
            blocks: 3,
            classes: 3,
        }
    }

    #[test]
    fn gains_scale_input_map_and_branches_only() {
        let spec = NetSpec {
            dims: small_dims(),
            activation: Activation::Tanh,
            gains: InitGains {
                input: 3.0,
                branch: 0.5,
            },
        };
        let plain = ResidualNet::random(small_dims(), Activation::Tanh, &mut Rng::new(9)).unwrap();
        let scaled = spec.build(&mut Rng::new(9)).unwrap();
        assert_eq!(scaled.input.weight, plain.input.weight.scale(3.0));
        assert_eq!(scaled.output, plain.output);
        for (a, b) in scaled.blocks.iter().zip(&plain.blocks) {
            assert_eq!(a.w1, b.w1);
            assert_eq!(a.w2, b.w2.scale(0.5));
        }
        let unit = NetSpec {
            gains: InitGains::UNIT,
            ..spec
        };
        assert_eq!(unit.build(&mut Rng::new(9)).unwrap(), plain);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn zero_block_is_identity() {
        let x = Rng::new(1).uniform(5, 3, -1.0, 1.0).unwrap();
        let (y, _) = block_forward(&x, &BlockParams::zeros(3, 6), Activation::Tanh).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn identity_weight_block() {
        let p = BlockParams {
            w1: Tensor::identity(2),
            b1: Tensor::zeros(1, 2),
            w2: Tensor::identity(2),
            b2: Tensor::zeros(1, 2),
        };
        let x = Tensor::row_vector(&[1.0, 0.0]);
        let (y, _) = block_forward(&x, &p, Activation::Tanh).unwrap();
        assert_eq!(y.data(), &[1.0 + libm::tanh(1.0), 0.0]);
    }

    #[test]
    fn block_forward_matches_termwise_evaluation() {
        let mut rng = Rng::new(2);
        let p = BlockParams::glorot(3, 5, &mut rng).unwrap();
        let mut p = p;
        p.b1 = rng.uniform(1, 5, -0.5, 0.5).unwrap();
        p.b2 = rng.uniform(1, 3, -0.5, 0.5).unwrap();
        let x = rng.uniform(5, 3, -1.0, 1.0).unwrap();
        let (y, _) = block_forward(&x, &p, Activation::Tanh).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                let mut branch = p.b2.get(0, c);
                for j in 0..5 {
                    let mut pre = p.b1.get(0, j);
                    for i in 0..3 {
                        pre += x.get(r, i) * p.w1.get(i, j);
                    }
                    branch += libm::tanh(pre) * p.w2.get(j, c);
                }
                let want = x.get(r, c) + branch;
                assert!((y.get(r, c) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn block_width_mismatch() {
        let x = Tensor::zeros(2, 3);
        assert!(block_forward(&x, &BlockParams::zeros(4, 4), Activation::Tanh).is_err());
    }

    #[test]
    fn block_vjp_zero_upstream() {
        let mut rng = Rng::new(4);
        let p = BlockParams::glorot(3, 3, &mut rng).unwrap();
        let x = rng.uniform(4, 3, -1.0, 1.0).unwrap();
        let (_, cache) = block_forward(&x, &p, Activation::Tanh).unwrap();
        let (dx, g) = block_vjp(&cache, &p, Activation::Tanh, &Tensor::zeros(4, 3)).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert!(g.tensors().iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn block_vjp_identity_block_passes_cotangent_through() {
        let mut rng = Rng::new(5);
        let p = BlockParams::zeros(3, 3);
        let x = rng.uniform(4, 3, -1.0, 1.0).unwrap();
        let up = rng.uniform(4, 3, -1.0, 1.0).unwrap();
        let (_, cache) = block_forward(&x, &p, Activation::Tanh).unwrap();
        let (dx, _) = block_vjp(&cache, &p, Activation::Tanh, &up).unwrap();
        assert_eq!(dx, up);
    }

    #[test]
    fn block_vjp_rejects_bad_cotangent() {
        let p = BlockParams::zeros(3, 3);
        let (_, cache) = block_forward(&Tensor::zeros(2, 3), &p, Activation::Tanh).unwrap();
        assert!(block_vjp(&cache, &p, Activation::Tanh, &Tensor::zeros(3, 3)).is_err());
        let other = BlockParams::zeros(3, 5);
        assert!(block_vjp(&cache, &other, Activation::Tanh, &Tensor::zeros(2, 3)).is_err());
    }

    // Scalar objective <c, block(x)> and its central differences.
    #[test]
    fn block_vjp_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let mut p = BlockParams::glorot(3, 4, &mut rng).unwrap();
        p.b1 = rng.uniform(1, 4, -0.5, 0.5).unwrap();
        let x = rng.uniform(5, 3, -1.0, 1.0).unwrap();
        let c = rng.uniform(5, 3, -1.0, 1.0).unwrap();
        let objective = |x: &Tensor, p: &BlockParams| {
            block_forward(x, p, Activation::Tanh)
                .unwrap()
                .0
                .dot(&c)
                .unwrap()
        };
        let (_, cache) = block_forward(&x, &p, Activation::Tanh).unwrap();
        let (dx, g) = block_vjp(&cache, &p, Activation::Tanh, &c).unwrap();
        let eps = 1e-5;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (objective(&xp, &p) - objective(&xm, &p)) / (2.0 * eps);
            assert!(rel_err(dx.data()[i], fd) <= 1e-6);
        }
        for t in 0..4 {
            for i in 0..g.tensors()[t].len() {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp.tensors_mut()[t].data_mut()[i] += eps;
                pm.tensors_mut()[t].data_mut()[i] -= eps;
                let fd = (objective(&x, &pp) - objective(&x, &pm)) / (2.0 * eps);
                assert!(rel_err(g.tensors()[t].data()[i], fd) <= 1e-6);
            }
        }
    }

    #[test]
    fn empty_range_is_identity() {
        let net = ResidualNet::random(small_dims(), Activation::Tanh, &mut Rng::new(0)).unwrap();
        let x = Rng::new(1).uniform(5, 4, -1.0, 1.0).unwrap();
        let (y, tape) = net.forward(&x, 2, 2).unwrap();
        assert_eq!(y, x);
        assert!(tape.is_empty());
    }

    #[test]
    fn range_validation() {
        let net = ResidualNet::random(small_dims(), Activation::Tanh, &mut Rng::new(0)).unwrap();
        let x = Tensor::zeros(5, 4);
        assert!(matches!(net.forward(&x, 2, 1), Err(Error::Range { .. })));
        assert!(matches!(net.forward(&x, 0, 4), Err(Error::Range { .. })));
        // width 4 given where the input layer expects 2
        assert!(net.forward(&x, 0, 3).is_err());
    }

    #[test]
    fn toy_net_maps_points_to_three_logits() {
        let mut rng = Rng::new(3);
        let net = ResidualNet::random(NetDims::toy(), Activation::Tanh, &mut rng).unwrap();
        let x = rng.uniform(200, 2, -1.0, 1.0).unwrap();
        let (logits, tape) = net.forward(&x, 0, 60).unwrap();
        assert_eq!(logits.shape(), (200, 3));
        assert_eq!(tape.len(), 60);
    }

    #[test]
    fn split_forward_composes_bitwise() {
        let mut rng = Rng::new(8);
        let net = ResidualNet::random(NetDims::toy(), Activation::Tanh, &mut rng).unwrap();
        let x = rng.uniform(20, 2, -1.0, 1.0).unwrap();
        let (full, _) = net.forward(&x, 0, 60).unwrap();
        let (mid, _) = net.forward(&x, 0, 25).unwrap();
        let (rest, _) = net.forward(&mid, 25, 60).unwrap();
        assert_eq!(full, rest);
    }

    #[test]
    fn zero_blocks_compose_to_identity() {
        let net = ResidualNet {
            input: Affine::zeros(2, 4),
            blocks: vec![BlockParams::zeros(4, 4); 5],
            output: Affine::zeros(4, 3),
            activation: Activation::Tanh,
        };
        let x = Rng::new(2).uniform(6, 4, -3.0, 3.0).unwrap();
        assert_eq!(net.forward(&x, 1, 4).unwrap().0, x);
    }

    #[test]
    fn tape_replay_reproduces_cached_inputs() {
        let mut rng = Rng::new(9);
        let net = ResidualNet::random(small_dims(), Activation::Tanh, &mut rng).unwrap();
        let x = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let (_, tape) = net.forward(&x, 0, 3).unwrap();
        for l in 0..2 {
            let (next, _) =
                block_forward(&tape.blocks[l].input, &net.blocks[l], net.activation).unwrap();
            assert_eq!(next, tape.blocks[l + 1].input);
        }
        let (last, _) =
            block_forward(&tape.blocks[2].input, &net.blocks[2], net.activation).unwrap();
        assert_eq!(Some(last), tape.features);
    }

    #[test]
    fn uniform_logits_give_log_three() {
        let (v, g) = loss_phi(&Tensor::zeros(4, 3), &[0, 1, 2, 0]).unwrap();
        assert!((v - libm::log(3.0)).abs() < 1e-15);
        assert!((v - 1.0986).abs() < 1e-4);
        assert_eq!(g.shape(), (4, 3));
    }

    #[test]
    fn confident_logits_give_vanishing_loss() {
        let logits = Tensor::from_rows(&[[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]).unwrap();
        let (v, _) = loss_phi(&logits, &[0, 2]).unwrap();
        assert!((0.0..1e-20).contains(&v));
    }

    #[test]
    fn loss_rejects_bad_labels() {
        assert!(matches!(
            loss_phi(&Tensor::zeros(2, 3), &[0, 3]),
            Err(Error::Label {
                label: 3,
                classes: 3
            })
        ));
        assert!(loss_phi(&Tensor::zeros(2, 3), &[0]).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let logits = Rng::new(10).uniform(4, 3, -2.0, 2.0).unwrap();
        let labels = [2, 0, 1, 1];
        let (_, g) = loss_phi(&logits, &labels).unwrap();
        let eps = 1e-5;
        for i in 0..logits.len() {
            let (mut lp, mut lm) = (logits.clone(), logits.clone());
            lp.data_mut()[i] += eps;
            lm.data_mut()[i] -= eps;
            let fd = (loss_phi(&lp, &labels).unwrap().0 - loss_phi(&lm, &labels).unwrap().0)
                / (2.0 * eps);
            assert!(rel_err(g.data()[i], fd) <= 1e-7, "entry {i}");
        }
        for r in 0..4 {
            assert!(g.row(r).iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        let mut net = ResidualNet::random(small_dims(), Activation::Tanh, &mut rng).unwrap();
        for t in net.tensors_mut() {
            if t.rows() == 1 {
                *t = rng.uniform(1, t.cols(), -0.3, 0.3).unwrap();
            }
        }
        let x = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let labels = [0, 1, 2, 1, 0];
        let loss =
            |net: &ResidualNet, x: &Tensor| loss_phi(&net.predict(x).unwrap(), &labels).unwrap().0;
        let (logits, tape) = net.forward(&x, 0, 3).unwrap();
        let (_, up) = loss_phi(&logits, &labels).unwrap();
        let (dx, grads) = net.backward(0, 3, &tape, &up).unwrap();
        let eps = 1e-5;
        let analytic: Vec<Tensor> = grads.tensors().into_iter().cloned().collect();
        for (t, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let (mut np, mut nm) = (net.clone(), net.clone());
                np.tensors_mut()[t].data_mut()[i] += eps;
                nm.tensors_mut()[t].data_mut()[i] -= eps;
                let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * eps);
                let a = g.data()[i];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3),
                    "tensor {t} entry {i}: {a} vs {fd}"
                );
            }
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
            let a = dx.data()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = Rng::new(13);
        let mut net = ResidualNet::random(small_dims(), Activation::Tanh, &mut rng).unwrap();
        let before = net.clone();
        let x = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let loss = serial_train_step(&mut net, &x, &[0, 1, 2, 0, 1], 0.0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(net, before);
        assert!(serial_train_step(&mut net, &x, &[0, 1, 2, 0, 1], -1.0).is_err());
    }

    #[test]
    fn serial_step_is_deterministic_and_descends() {
        let mut rng = Rng::new(14);
        let net = ResidualNet::random(small_dims(), Activation::Tanh, &mut rng).unwrap();
        let x = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let labels = [0, 1, 2, 0, 1];
        let (mut a, mut b) = (net.clone(), net);
        let la = serial_train_step(&mut a, &x, &labels, 0.05).unwrap();
        let lb = serial_train_step(&mut b, &x, &labels, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.to_bits(), lb.to_bits());
        let after = loss_phi(&a.predict(&x).unwrap(), &labels).unwrap().0;
        assert!(after < la);
    }

    #[test]
    fn accuracy_extremes() {
        let labels = [0, 1, 2, 2];
        let perfect = Tensor::from_rows(&[
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(accuracy_of_logits(&perfect, &labels), 1.0);
        // constant logits tie everywhere -> always class 0
        let constant = Tensor::zeros(6, 3);
        let balanced = [0, 1, 2, 0, 1, 2];
        assert!((accuracy_of_logits(&constant, &balanced) - 1.0 / 3.0).abs() < 1e-15);
    }
}
