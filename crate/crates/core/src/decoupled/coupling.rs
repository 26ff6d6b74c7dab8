//! Auxiliary variables `λ_k` and multipliers `κ_k` at the stage interfaces,
//! and the corrections that pull them toward consistency.
//!
//! State is stored per sample over the whole training set so each sample keeps
//! its own `λ_k` across epochs; an iteration works on an [`AuxBatch`] gathered
//! for its mini-batch and scattered back afterwards. Stage 0 has no stored
//! state: its input is the network input itself and its multiplier is zero.

use alloc::vec::Vec;

use crate::decoupled::schedule::{Method, StepHyper};
use crate::error::{Error, Result};
use crate::penalty::{PenaltyFn, ViolationReport};
use crate::tensor::Tensor;

fn slot(stages: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::FixedStage);
    }
    if k >= stages {
        return Err(Error::Range {
            from: k,
            to: k + 1,
            len: stages,
        });
    }
    Ok(k - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxState {
    stages: usize,
    lambda: Vec<Tensor>,
    kappa: Vec<Tensor>,
    /// `X^{k−1}_{kn}` as last produced by stage `k − 1`.
    boundary: Vec<Option<Tensor>>,
}

impl AuxState {
    /// `lambda[j]` initialises `λ_{j+1}`; multipliers start at zero.
    pub fn new(lambda: Vec<Tensor>) -> Self {
        let kappa = lambda
            .iter()
            .map(|l| Tensor::zeros(l.rows(), l.cols()))
            .collect();
        let boundary = lambda.iter().map(|_| None).collect();
        Self {
            stages: lambda.len() + 1,
            lambda,
            kappa,
            boundary,
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn lambda(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.lambda[slot(self.stages, k)?])
    }

    pub fn kappa(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.kappa[slot(self.stages, k)?])
    }

    pub fn set_lambda(&mut self, k: usize, value: Tensor) -> Result<()> {
        let i = slot(self.stages, k)?;
        self.lambda[i] = value;
        Ok(())
    }

    pub fn set_kappa(&mut self, k: usize, value: Tensor) -> Result<()> {
        let i = slot(self.stages, k)?;
        self.kappa[i] = value;
        Ok(())
    }

    pub fn boundary(&self, k: usize) -> Result<Option<&Tensor>> {
        Ok(self.boundary[slot(self.stages, k)?].as_ref())
    }

    pub fn gather(&self, indices: &[usize]) -> AuxBatch {
        AuxBatch {
            indices: indices.to_vec(),
            lambda: self.lambda.iter().map(|t| t.gather_rows(indices)).collect(),
            kappa: self.kappa.iter().map(|t| t.gather_rows(indices)).collect(),
            boundary: alloc::vec![None; self.lambda.len()],
            adjoint: alloc::vec![None; self.lambda.len()],
        }
    }

    pub fn scatter(&mut self, batch: &AuxBatch) -> Result<()> {
        let idx = &batch.indices;
        for j in 0..self.lambda.len() {
            self.lambda[j].scatter_rows(idx, &batch.lambda[j])?;
            self.kappa[j].scatter_rows(idx, &batch.kappa[j])?;
            if let Some(b) = &batch.boundary[j] {
                let full = self.boundary[j].get_or_insert_with(|| {
                    Tensor::zeros(self.lambda[j].rows(), self.lambda[j].cols())
                });
                full.scatter_rows(idx, b)?;
            }
        }
        Ok(())
    }

    /// `ψ(λ_k, X^{k−1}_{kn})` over the whole training set.
    pub fn violation_report(&self, penalty: PenaltyFn) -> Result<ViolationReport> {
        let pairs = self
            .lambda
            .iter()
            .zip(&self.boundary)
            .map(|(l, b)| b.as_ref().map(|b| (l, b)))
            .collect::<Option<Vec<_>>>()
            .ok_or(Error::NoBoundary)?;
        ViolationReport::from_pairs(penalty, pairs)
    }
}

/// Interface state for the samples of one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxBatch {
    indices: Vec<usize>,
    lambda: Vec<Tensor>,
    kappa: Vec<Tensor>,
    boundary: Vec<Option<Tensor>>,
    adjoint: Vec<Option<Tensor>>,
}

impl AuxBatch {
    /// A batch holding its own state, not tied to any stored samples.
    pub fn standalone(lambda: Vec<Tensor>, kappa: Vec<Tensor>) -> Result<Self> {
        if lambda.len() != kappa.len()
            || lambda
                .iter()
                .zip(&kappa)
                .any(|(l, k)| l.shape() != k.shape())
        {
            return Err(Error::Config("lambda and kappa must pair up".into()));
        }
        let rows = lambda.first().map_or(0, Tensor::rows);
        Ok(Self {
            indices: (0..rows).collect(),
            boundary: alloc::vec![None; lambda.len()],
            adjoint: alloc::vec![None; lambda.len()],
            lambda,
            kappa,
        })
    }

    pub fn stages(&self) -> usize {
        self.lambda.len() + 1
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn lambda(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.lambda[slot(self.stages(), k)?])
    }

    pub fn kappa(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.kappa[slot(self.stages(), k)?])
    }

    pub fn boundary(&self, k: usize) -> Result<Option<&Tensor>> {
        Ok(self.boundary[slot(self.stages(), k)?].as_ref())
    }

    pub fn adjoint(&self, k: usize) -> Result<Option<&Tensor>> {
        Ok(self.adjoint[slot(self.stages(), k)?].as_ref())
    }

    /// Records `X^{k−1}_{kn}`, the output of stage `k − 1`.
    pub fn set_boundary(&mut self, k: usize, x: Tensor) -> Result<()> {
        let i = slot(self.stages(), k)?;
        self.boundary[i] = Some(x);
        Ok(())
    }

    /// Records `p^k_{kn}`, the cotangent stage `k` returned at its input.
    pub fn set_adjoint(&mut self, k: usize, p: Tensor) -> Result<()> {
        let i = slot(self.stages(), k)?;
        self.adjoint[i] = Some(p);
        Ok(())
    }

    fn cached(&self, k: usize) -> Result<(usize, &Tensor, &Tensor)> {
        let i = slot(self.stages(), k)?;
        match (&self.boundary[i], &self.adjoint[i]) {
            (Some(x), Some(p)) => Ok((i, x, p)),
            _ => Err(Error::NoBoundary),
        }
    }

    /// Gradient of the `λ_k` subproblem:
    /// `(β/#) ∂ψ(λ_k, X^{k−1}_{kn})/∂λ + p^k_{kn} − κ_k`.
    pub fn aux_gradient(&self, k: usize, beta: f64, penalty: PenaltyFn) -> Result<Tensor> {
        let (i, x, p) = self.cached(k)?;
        let lambda = &self.lambda[i];
        let (d_lambda, _) = penalty.grads(lambda, x)?;
        let mut g = d_lambda.scale(beta / lambda.len() as f64);
        g.axpy(1.0, p)?;
        g.axpy(-1.0, &self.kappa[i])?;
        Ok(g)
    }

    /// One gradient step on `λ_k`.
    pub fn correct_aux(&mut self, k: usize, beta: f64, lr: f64, penalty: PenaltyFn) -> Result<()> {
        let g = self.aux_gradient(k, beta, penalty)?;
        let i = slot(self.stages(), k)?;
        self.lambda[i].axpy(-lr, &g)
    }

    /// `κ_k ← κ_k − η (#/2β)(λ_k − X^{k−1}_{kn})`, derived for the squared-ℓ2 penalty.
    pub fn correct_multiplier(&mut self, k: usize, beta: f64, lr: f64) -> Result<()> {
        let (i, x, _) = self.cached(k)?;
        let diff = self.lambda[i].sub(x)?;
        let count = diff.len() as f64;
        self.kappa[i].axpy(-lr * count / (2.0 * beta), &diff)
    }

    pub fn violation(&self, k: usize, penalty: PenaltyFn) -> Result<f64> {
        let (i, x, _) = self.cached(k)?;
        penalty.value(&self.lambda[i], x)
    }

    /// Corrects `λ_k` (and `κ_k` for the augmented Lagrangian) once, then
    /// keeps going while `ψ > τ`, up to `max_corrections` rounds. Returns the
    /// number of rounds taken.
    pub fn correct(&mut self, k: usize, hyper: &StepHyper) -> Result<usize> {
        let mut rounds = 0;
        loop {
            self.correct_aux(k, hyper.beta, hyper.aux_lr, hyper.penalty)?;
            if hyper.method == Method::AugmentedLagrangian {
                self.correct_multiplier(k, hyper.beta, hyper.kappa_lr)?;
            }
            rounds += 1;
            if rounds >= hyper.max_corrections || self.violation(k, hyper.penalty)? <= hyper.tau {
                return Ok(rounds);
            }
        }
    }

    /// Runs [`AuxBatch::correct`] for `k = 1..K` in ascending order.
    pub fn correction_sweep(&mut self, hyper: &StepHyper) -> Result<usize> {
        let mut total = 0;
        for k in 1..self.stages() {
            total += self.correct(k, hyper)?;
        }
        Ok(total)
    }

    pub fn violation_report(&self, penalty: PenaltyFn) -> Result<ViolationReport> {
        let mut pairs = Vec::with_capacity(self.lambda.len());
        for k in 1..self.stages() {
            let (i, x, _) = self.cached(k)?;
            pairs.push((&self.lambda[i], x));
        }
        ViolationReport::from_pairs(penalty, pairs)
    }
}
