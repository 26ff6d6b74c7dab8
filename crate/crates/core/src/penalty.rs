//! Discrepancy metrics `ψ(λ, x)` between an auxiliary variable and the state
//! it stands in for, with gradients in both arguments.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PenaltyKind {
    /// `Σ (λ − x)²`, not rooted.
    #[default]
    SquaredL2,
    /// `Σ |λ − x|`.
    L1,
    /// `max |λ − x|`.
    LInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PenaltyFn {
    pub kind: PenaltyKind,
}

impl PenaltyFn {
    pub const fn new(kind: PenaltyKind) -> Self {
        Self { kind }
    }

    pub const fn squared_l2() -> Self {
        Self::new(PenaltyKind::SquaredL2)
    }

    pub fn value(&self, lambda: &Tensor, x: &Tensor) -> Result<f64> {
        psi(*self, lambda, x)
    }

    pub fn grads(&self, lambda: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        psi_grads(*self, lambda, x)
    }
}

fn check(lambda: &Tensor, x: &Tensor, op: &'static str) -> Result<()> {
    if lambda.shape() != x.shape() {
        return Err(Error::Shape {
            op,
            left: lambda.shape(),
            right: x.shape(),
        });
    }
    Ok(())
}

pub fn psi(f: PenaltyFn, lambda: &Tensor, x: &Tensor) -> Result<f64> {
    check(lambda, x, "psi")?;
    let diffs = lambda.data().iter().zip(x.data()).map(|(l, v)| l - v);
    Ok(match f.kind {
        PenaltyKind::SquaredL2 => diffs.map(|d| d * d).sum(),
        PenaltyKind::L1 => diffs.map(f64::abs).sum(),
        PenaltyKind::LInf => diffs.fold(0.0, |m, d| m.max(d.abs())),
    })
}

/// `(∂ψ/∂λ, ∂ψ/∂x)`; subgradients for the nonsmooth kinds. `∂ψ/∂x` is always
/// the exact negation of `∂ψ/∂λ`.
pub fn psi_grads(f: PenaltyFn, lambda: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
    check(lambda, x, "psi_grads")?;
    let d_lambda = match f.kind {
        PenaltyKind::SquaredL2 => lambda.zip_with(x, "psi_grads", |l, v| 2.0 * (l - v))?,
        PenaltyKind::L1 => lambda.zip_with(x, "psi_grads", |l, v| sign(l - v))?,
        PenaltyKind::LInf => {
            let mut g = Tensor::zeros(lambda.rows(), lambda.cols());
            let mut best: Option<(usize, f64)> = None;
            for (i, (l, v)) in lambda.data().iter().zip(x.data()).enumerate() {
                let d = (l - v).abs();
                if best.is_none_or(|(_, m)| d > m) {
                    best = Some((i, d));
                }
            }
            if let Some((i, m)) = best {
                if m > 0.0 {
                    g.data_mut()[i] = sign(lambda.data()[i] - x.data()[i]);
                }
            }
            g
        }
    };
    let d_x = d_lambda.map(|v| -v);
    Ok((d_lambda, d_x))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Boundary mismatch `ψ(λ_k, X^{k−1}_{kn})` for every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ViolationReport {
    /// One entry per stage; entry 0 is always zero.
    pub per_stage: Vec<f64>,
    pub max: f64,
    /// Element count of one `λ_k`.
    pub count: usize,
}

impl ViolationReport {
    /// `pairs[k-1] = (λ_k, X^{k−1}_{kn})` for `k = 1..K`.
    pub fn from_pairs<'a, I>(f: PenaltyFn, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a Tensor, &'a Tensor)>,
    {
        let mut per_stage = alloc::vec![0.0];
        let mut count = 0;
        for (lambda, x) in pairs {
            per_stage.push(psi(f, lambda, x)?);
            count = lambda.len();
        }
        let max = per_stage.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            per_stage,
            max,
            count,
        })
    }
}
