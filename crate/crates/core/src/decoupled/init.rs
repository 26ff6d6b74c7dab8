//! Initial network parameters and auxiliary variables.

use alloc::vec::Vec;

use crate::decoupled::schedule::Schedule;
use crate::decoupled::stage::partition;
use crate::error::{Error, Result};
use crate::network::{serial_train_step, NetSpec, ResidualNet};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStrategy {
    /// Random parameters; `λ` from one forward pass.
    Random,
    /// Train the full-depth network serially for a few epochs first.
    WarmStart { epochs: usize },
    /// Train a `K`-block coarse network, then replicate each block `n` times.
    Multilevel { coarse_epochs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitOutcome {
    pub net: ResidualNet,
    /// `lambda[j]` initialises `λ_{j+1}`.
    pub lambda: Vec<Tensor>,
}

/// Serial states `X_{kn}` at the interior stage boundaries `k = 1..K`.
pub fn boundary_states(net: &ResidualNet, x: &Tensor, stages: usize) -> Result<Vec<Tensor>> {
    let ranges = partition(net.depth(), stages)?;
    let mut out = Vec::with_capacity(stages.saturating_sub(1));
    let mut cur = x.clone();
    for r in ranges.iter().take(stages - 1) {
        cur = net.forward(&cur, r.start, r.end)?.0;
        out.push(cur.clone());
    }
    Ok(out)
}

fn train_serially(
    net: &mut ResidualNet,
    x: &Tensor,
    labels: &[usize],
    epochs: usize,
    lr: &Schedule,
) -> Result<()> {
    for epoch in 0..epochs {
        let loss = serial_train_step(net, x, labels, lr.at(epoch))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "initialisation loss",
                epoch: Some(epoch),
                stage: None,
            });
        }
    }
    Ok(())
}

/// Trains a coarse network with one block per stage for `coarse_epochs`
/// full-batch steps, then fills each stage with `n = L/K` copies of its
/// coarse block. Each copy's residual branch is scaled by `1/n`, so a stage
/// takes `n` steps of size `1/n` along the coarse block's update.
pub fn init_multilevel(
    spec: &NetSpec,
    stages: usize,
    coarse_epochs: usize,
    x: &Tensor,
    labels: &[usize],
    lr: &Schedule,
    rng: &mut Rng,
) -> Result<InitOutcome> {
    partition(spec.dims.blocks, stages)?;
    let per_stage = spec.dims.blocks / stages;
    let mut coarse = spec.with_blocks(stages).build(rng)?;
    train_serially(&mut coarse, x, labels, coarse_epochs, lr)?;
    let mut blocks = Vec::with_capacity(spec.dims.blocks);
    for b in &coarse.blocks {
        let mut copy = b.clone();
        copy.scale_branch(1.0 / per_stage as f64);
        blocks.extend(core::iter::repeat_n(copy, per_stage));
    }
    let net = ResidualNet {
        input: coarse.input,
        blocks,
        output: coarse.output,
        activation: spec.activation,
    };
    let lambda = boundary_states(&net, x, stages)?;
    Ok(InitOutcome { net, lambda })
}

pub fn initialize(
    strategy: InitStrategy,
    spec: &NetSpec,
    stages: usize,
    x: &Tensor,
    labels: &[usize],
    lr: &Schedule,
    rng: &mut Rng,
) -> Result<InitOutcome> {
    match strategy {
        InitStrategy::Multilevel { coarse_epochs } => {
            init_multilevel(spec, stages, coarse_epochs, x, labels, lr, rng)
        }
        InitStrategy::Random | InitStrategy::WarmStart { .. } => {
            partition(spec.dims.blocks, stages)?;
            let mut net = spec.build(rng)?;
            if let InitStrategy::WarmStart { epochs } = strategy {
                train_serially(&mut net, x, labels, epochs, lr)?;
            }
            let lambda = boundary_states(&net, x, stages)?;
            Ok(InitOutcome { net, lambda })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_circles;
    use crate::network::{Activation, InitGains, NetDims};

    fn dims() -> NetDims {
        NetDims {
            inputs: 2,
            width: 4,
            hidden: 4,
            blocks: 12,
            classes: 3,
        }
    }

    fn spec() -> NetSpec {
        NetSpec {
            dims: dims(),
            activation: Activation::Tanh,
            gains: InitGains::UNIT,
        }
    }

    #[test]
    fn boundary_states_follow_the_serial_pass() {
        let mut rng = Rng::new(1);
        let net = spec().build(&mut rng).unwrap();
        let x = rng.uniform(5, 2, -1.0, 1.0).unwrap();
        let b = boundary_states(&net, &x, 3).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0], net.forward(&x, 0, 4).unwrap().0);
        assert_eq!(b[1], net.forward(&x, 0, 8).unwrap().0);
        assert!(boundary_states(&net, &x, 1).unwrap().is_empty());
    }

    #[test]
    fn zero_budget_multilevel_replicates_random_blocks() {
        let data = gen_circles(30, 2);
        let lr = Schedule::constant(0.1);
        let out = init_multilevel(
            &spec(),
            3,
            0,
            &data.points,
            &data.labels,
            &lr,
            &mut Rng::new(3),
        )
        .unwrap();
        assert_eq!(out.net.depth(), 12);
        for k in 0..3 {
            for m in 1..4 {
                assert_eq!(out.net.blocks[4 * k], out.net.blocks[4 * k + m]);
            }
        }
        assert_eq!(
            out.lambda,
            boundary_states(&out.net, &data.points, 3).unwrap()
        );
    }

    #[test]
    fn coarse_training_changes_the_replicated_blocks() {
        let data = gen_circles(30, 4);
        let lr = Schedule::constant(0.1);
        let a = init_multilevel(
            &spec(),
            2,
            0,
            &data.points,
            &data.labels,
            &lr,
            &mut Rng::new(5),
        )
        .unwrap();
        let b = init_multilevel(
            &spec(),
            2,
            5,
            &data.points,
            &data.labels,
            &lr,
            &mut Rng::new(5),
        )
        .unwrap();
        assert_ne!(a.net, b.net);
    }

    #[test]
    fn warm_start_lambda_matches_warm_net() {
        let data = gen_circles(30, 6);
        let lr = Schedule::constant(0.05);
        let out = initialize(
            InitStrategy::WarmStart { epochs: 3 },
            &spec(),
            4,
            &data.points,
            &data.labels,
            &lr,
            &mut Rng::new(7),
        )
        .unwrap();
        assert_eq!(out.lambda.len(), 3);
        assert_eq!(
            out.lambda,
            boundary_states(&out.net, &data.points, 4).unwrap()
        );
    }

    #[test]
    fn indivisible_depth_is_rejected() {
        let data = gen_circles(10, 8);
        let lr = Schedule::constant(0.1);
        let r = initialize(
            InitStrategy::Random,
            &spec(),
            5,
            &data.points,
            &data.labels,
            &lr,
            &mut Rng::new(0),
        );
        assert!(matches!(r, Err(Error::Partition { .. })));
    }
}
