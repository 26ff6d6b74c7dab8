use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::network::{
    descend, loss_phi, Activation, Affine, BlockParams, ForwardTape, Grads, ResidualNet, Segment,
};
use crate::penalty::PenaltyFn;
use crate::tensor::Tensor;

/// `K` equal contiguous block ranges covering `[0, blocks)`.
pub fn partition(blocks: usize, stages: usize) -> Result<Vec<Range<usize>>> {
    if stages == 0 || !blocks.is_multiple_of(stages) {
        return Err(Error::Partition { blocks, stages });
    }
    let n = blocks / stages;
    Ok((0..stages).map(|k| k * n..(k + 1) * n).collect())
}

/// The parameter slice owned by one stage: its blocks, plus `S` for the
/// first stage and `T` for the last.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub index: usize,
    pub range: Range<usize>,
    pub input: Option<Affine>,
    pub blocks: Vec<BlockParams>,
    pub output: Option<Affine>,
    pub activation: Activation,
}

impl StageParams {
    pub fn segment(&self) -> Segment<'_> {
        Segment {
            input: self.input.as_ref(),
            blocks: &self.blocks,
            output: self.output.as_ref(),
            activation: self.activation,
        }
    }

    pub fn is_last(&self) -> bool {
        self.output.is_some()
    }

    /// Parameter tensors in the order used by [`Grads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(a) = &mut self.input {
            out.push(&mut a.weight);
            out.push(&mut a.bias);
        }
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        if let Some(a) = &mut self.output {
            out.push(&mut a.weight);
            out.push(&mut a.bias);
        }
        out
    }
}

/// Splits a network into `stages` stage slices.
pub fn split_stages(net: &ResidualNet, stages: usize) -> Result<Vec<StageParams>> {
    let ranges = partition(net.depth(), stages)?;
    let last = stages - 1;
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(k, range)| StageParams {
            index: k,
            input: (k == 0).then(|| net.input.clone()),
            blocks: net.blocks[range.clone()].to_vec(),
            output: (k == last).then(|| net.output.clone()),
            activation: net.activation,
            range,
        })
        .collect())
}

/// Reassembles stage slices (in any order) into a full network.
pub fn join_stages(mut stages: Vec<StageParams>) -> Result<ResidualNet> {
    stages.sort_by_key(|s| s.index);
    let bad = || Error::Config("stage slices do not tile the network".into());
    let activation = stages.first().ok_or_else(bad)?.activation;
    let mut input = None;
    let mut output = None;
    let mut blocks = Vec::new();
    for s in stages {
        if s.range.start != blocks.len() || s.range.len() != s.blocks.len() {
            return Err(bad());
        }
        input = input.or(s.input);
        output = s.output.or(output);
        blocks.extend(s.blocks);
    }
    Ok(ResidualNet {
        input: input.ok_or_else(bad)?,
        blocks,
        output: output.ok_or_else(bad)?,
        activation,
    })
}

/// What the stage differentiates after its forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum StageTarget {
    /// Last stage: the true loss φ on its logits.
    Loss { labels: Vec<usize> },
    /// Inner stages: `(β/#) ψ(λ_{k+1}, X) + ⟨κ_{k+1}, X⟩` on the boundary
    /// output `X`, with `#` the element count of `λ_{k+1}`.
    Synthetic {
        lambda_next: Tensor,
        kappa_next: Tensor,
        beta: f64,
        penalty: PenaltyFn,
    },
}

impl StageTarget {
    /// Objective value and its gradient w.r.t. the stage output.
    pub fn evaluate(&self, output: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            StageTarget::Loss { labels } => loss_phi(output, labels),
            StageTarget::Synthetic {
                lambda_next,
                kappa_next,
                beta,
                penalty,
            } => {
                let scale = beta / lambda_next.len() as f64;
                let value = scale * penalty.value(lambda_next, output)? + kappa_next.dot(output)?;
                let (_, d_x) = penalty.grads(lambda_next, output)?;
                let mut grad = d_x.scale(scale);
                grad.axpy(1.0, kappa_next)?;
                Ok((value, grad))
            }
        }
    }
}

/// Gradients of one stage objective, without any update applied.
#[derive(Clone, Debug, PartialEq)]
pub struct StageGradients {
    pub objective: f64,
    /// Cotangent at the stage input (`p^k_{kn}` for `k >= 1`).
    pub entry_adjoint: Tensor,
    pub grads: Grads,
}

/// A stage and the state cached by its latest forward pass.
#[derive(Clone, Debug)]
pub struct Stage {
    pub params: StageParams,
    tape: Option<ForwardTape>,
    boundary: Option<Tensor>,
}

impl Stage {
    pub fn new(params: StageParams) -> Self {
        Self {
            params,
            tape: None,
            boundary: None,
        }
    }

    pub fn index(&self) -> usize {
        self.params.index
    }

    /// Runs the stage from `input` (raw points for stage 0, `λ_k` otherwise)
    /// and caches the tape; returns the boundary output (logits for the last stage).
    pub fn forward(&mut self, input: &Tensor) -> Result<&Tensor> {
        let width = self.params.blocks.first().map(BlockParams::width);
        if self.params.input.is_none() {
            if let Some(w) = width {
                if input.cols() != w {
                    return Err(Error::Shape {
                        op: "stage_forward",
                        left: input.shape(),
                        right: (input.rows(), w),
                    });
                }
            }
        }
        let (out, tape) = self.params.segment().forward(input)?;
        self.tape = Some(tape);
        Ok(self.boundary.insert(out))
    }

    pub fn boundary(&self) -> Option<&Tensor> {
        self.boundary.as_ref()
    }

    pub fn gradients(&self, target: &StageTarget) -> Result<StageGradients> {
        let stage = self.params.index;
        let (tape, out) = match (&self.tape, &self.boundary) {
            (Some(t), Some(o)) => (t, o),
            _ => return Err(Error::MissingForward { stage }),
        };
        match (target, self.params.is_last()) {
            (StageTarget::Loss { .. }, true) | (StageTarget::Synthetic { .. }, false) => {}
            _ => return Err(Error::MissingSnapshot { stage }),
        }
        let (objective, upstream) = target.evaluate(out)?;
        let (entry_adjoint, grads) = self.params.segment().backward(tape, &upstream)?;
        Ok(StageGradients {
            objective,
            entry_adjoint,
            grads,
        })
    }

    /// Backpropagates the stage objective, takes one gradient step of size
    /// `lr` on every parameter the stage owns and drops the tape.
    pub fn backward_update(&mut self, target: &StageTarget, lr: f64) -> Result<StageGradients> {
        let g = self.gradients(target)?;
        let p = &mut self.params;
        descend(
            p.input.as_mut(),
            &mut p.blocks,
            p.output.as_mut(),
            &g.grads,
            lr,
        )?;
        self.tape = None;
        Ok(g)
    }

    pub fn run(&mut self, job: &StageJob) -> Result<StageReport> {
        if job.stage != self.params.index {
            return Err(Error::Worker {
                stage: self.params.index,
                reason: alloc::format!("received job for stage {}", job.stage),
            });
        }
        let boundary = self.forward(&job.input)?.clone();
        let g = self.backward_update(&job.target, job.lr)?;
        Ok(StageReport {
            stage: job.stage,
            iteration: job.iteration,
            boundary,
            entry_adjoint: g.entry_adjoint,
            objective: g.objective,
        })
    }
}

/// One stage's share of an iteration. Owns its data so it can cross threads.
#[derive(Clone, Debug, PartialEq)]
pub struct StageJob {
    pub stage: usize,
    pub iteration: u64,
    pub input: Tensor,
    pub target: StageTarget,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub iteration: u64,
    /// `X^k_{kn+n}` (logits for the last stage), from the pre-update parameters.
    pub boundary: Tensor,
    pub entry_adjoint: Tensor,
    pub objective: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{serial_train_step, NetDims};
    use crate::rng::Rng;
    use alloc::vec;

    fn net(blocks: usize, seed: u64) -> ResidualNet {
        let dims = NetDims {
            inputs: 2,
            width: 4,
            hidden: 4,
            blocks,
            classes: 3,
        };
        ResidualNet::random(dims, Activation::Tanh, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition(60, 1).unwrap(), vec![0..60]);
        assert_eq!(
            partition(60, 4).unwrap(),
            vec![0..15, 15..30, 30..45, 45..60]
        );
        assert!(matches!(
            partition(60, 7),
            Err(Error::Partition {
                blocks: 60,
                stages: 7
            })
        ));
        assert!(partition(60, 0).is_err());
    }

    #[test]
    fn split_join_round_trip() {
        let n = net(12, 1);
        for k in [1, 2, 3, 4, 6] {
            let stages = split_stages(&n, k).unwrap();
            assert!(stages[0].input.is_some());
            assert!(stages[k - 1].output.is_some());
            assert_eq!(join_stages(stages).unwrap(), n);
        }
    }

    #[test]
    fn single_stage_matches_full_forward() {
        let n = net(6, 2);
        let x = Rng::new(3).uniform(5, 2, -1.0, 1.0).unwrap();
        let mut stage = Stage::new(split_stages(&n, 1).unwrap().remove(0));
        assert_eq!(stage.forward(&x).unwrap(), &n.predict(&x).unwrap());
    }

    #[test]
    fn zero_blocks_return_lambda() {
        let mut n = net(4, 4);
        for b in &mut n.blocks {
            *b = BlockParams::zeros(4, 4);
        }
        let lambda = Rng::new(5).uniform(5, 4, -1.0, 1.0).unwrap();
        let mut stage = Stage::new(split_stages(&n, 2).unwrap().remove(1));
        let params = stage.params.clone();
        let mut inner = Stage::new(StageParams {
            output: None,
            ..params
        });
        assert_eq!(inner.forward(&lambda).unwrap(), &lambda);
        assert!(stage.forward(&Tensor::zeros(5, 3)).is_err());
    }

    #[test]
    fn stages_reproduce_serial_trajectory() {
        let n = net(12, 6);
        let x = Rng::new(7).uniform(5, 2, -1.0, 1.0).unwrap();
        let k = 3;
        let mut stages: Vec<Stage> = split_stages(&n, k)
            .unwrap()
            .into_iter()
            .map(Stage::new)
            .collect();
        let mut input = x.clone();
        for s in &mut stages {
            let to = s.params.range.end;
            let out = s.forward(&input).unwrap().clone();
            assert_eq!(out, n.forward(&x, 0, to).unwrap().0);
            // the exact serial state becomes λ for the next stage
            input = out;
        }
    }

    #[test]
    fn stationary_synthetic_target_gives_zero_update() {
        let n = net(4, 8);
        let x = Rng::new(9).uniform(5, 2, -1.0, 1.0).unwrap();
        let mut stage = Stage::new(split_stages(&n, 2).unwrap().remove(0));
        let out = stage.forward(&x).unwrap().clone();
        let before = stage.params.clone();
        let target = StageTarget::Synthetic {
            lambda_next: out,
            kappa_next: Tensor::zeros(5, 4),
            beta: 1.0,
            penalty: PenaltyFn::squared_l2(),
        };
        let g = stage.backward_update(&target, 0.1).unwrap();
        assert_eq!(g.entry_adjoint.max_abs(), 0.0);
        assert!(g.grads.tensors().iter().all(|t| t.max_abs() == 0.0));
        assert_eq!(stage.params, before);
    }

    #[test]
    fn single_stage_step_equals_serial_step() {
        let mut n = net(6, 10);
        let x = Rng::new(11).uniform(5, 2, -1.0, 1.0).unwrap();
        let labels = vec![0, 1, 2, 1, 0];
        let mut stage = Stage::new(split_stages(&n, 1).unwrap().remove(0));
        let job = StageJob {
            stage: 0,
            iteration: 0,
            input: x.clone(),
            target: StageTarget::Loss {
                labels: labels.clone(),
            },
            lr: 0.1,
        };
        let report = stage.run(&job).unwrap();
        let loss = serial_train_step(&mut n, &x, &labels, 0.1).unwrap();
        assert_eq!(report.objective.to_bits(), loss.to_bits());
        assert_eq!(join_stages(vec![stage.params]).unwrap(), n);
    }

    #[test]
    fn backward_requires_forward_and_matching_target() {
        let n = net(4, 12);
        let mut stages: Vec<Stage> = split_stages(&n, 2)
            .unwrap()
            .into_iter()
            .map(Stage::new)
            .collect();
        let loss = StageTarget::Loss { labels: vec![0; 5] };
        assert!(matches!(
            stages[1].gradients(&loss),
            Err(Error::MissingForward { stage: 1 })
        ));
        stages[0].forward(&Tensor::zeros(5, 2)).unwrap();
        assert!(matches!(
            stages[0].gradients(&loss),
            Err(Error::MissingSnapshot { stage: 0 })
        ));
    }
}
