//! Central finite-difference verification of every backward pass used in
//! training: the serial loss, the penalty and augmented-Lagrangian synthetic
//! losses, and the auxiliary-variable correction direction.

use alloc::vec::Vec;

use crate::decoupled::coupling::AuxBatch;
use crate::decoupled::stage::{Stage, StageParams, StageTarget};
use crate::error::{Error, Result};
use crate::network::{loss_phi, Activation, NetDims, ResidualNet};
use crate::penalty::{psi, PenaltyFn};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error of one gradient tensor: `max|a − f| / max(max|a|, max|f|)`.
pub fn tensor_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs());
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0_f64, |m, (a, f)| m.max((a - f).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `objective` w.r.t. every entry of `point`.
pub fn central_difference(
    point: &Tensor,
    eps: f64,
    objective: impl Fn(&Tensor) -> f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(point.rows(), point.cols());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let base = point.data()[i];
        probe.data_mut()[i] = base + eps;
        let up = objective(&probe);
        probe.data_mut()[i] = base - eps;
        let down = objective(&probe);
        probe.data_mut()[i] = base;
        let g = (up - down) / (2.0 * eps);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "finite difference",
                epoch: None,
                stage: None,
            });
        }
        grad.data_mut()[i] = g;
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: &'static str,
    pub tensors: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub eps: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }

    pub fn entry(&self, name: &str) -> Option<&GradcheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Instance used by [`fd_gradcheck`]: width 4, hidden 4, 3 blocks, batch 5.
pub const CHECK_DIMS: NetDims = NetDims {
    inputs: 2,
    width: 4,
    hidden: 4,
    blocks: 3,
    classes: 3,
};
pub const CHECK_BATCH: usize = 5;
pub const CHECK_BETA: f64 = 3.0;

fn randomize_biases(tensors: Vec<&mut Tensor>, rng: &mut Rng) -> Result<()> {
    for t in tensors {
        if t.rows() == 1 {
            *t = rng.uniform(1, t.cols(), -0.3, 0.3)?;
        }
    }
    Ok(())
}

/// Checks every parameter gradient of a stage plus the cotangent at its input.
fn check_stage(
    name: &'static str,
    params: &StageParams,
    input: &Tensor,
    target: &StageTarget,
    eps: f64,
) -> Result<GradcheckEntry> {
    let objective = |p: &StageParams, x: &Tensor| -> Result<f64> {
        let mut s = Stage::new(p.clone());
        let out = s.forward(x)?.clone();
        Ok(target.evaluate(&out)?.0)
    };
    let mut stage = Stage::new(params.clone());
    stage.forward(input)?;
    let g = stage.gradients(target)?;
    let analytic: Vec<Tensor> = g.grads.tensors().into_iter().cloned().collect();
    let mut worst = 0.0_f64;
    for (t, a) in analytic.iter().enumerate() {
        let base = params.clone().tensors_mut()[t].clone();
        let numeric = central_difference(&base, eps, |probe| {
            let mut p = params.clone();
            *p.tensors_mut()[t] = probe.clone();
            objective(&p, input).unwrap_or(f64::NAN)
        })?;
        worst = worst.max(tensor_rel_err(a, &numeric));
    }
    let numeric = central_difference(input, eps, |probe| {
        objective(params, probe).unwrap_or(f64::NAN)
    })?;
    worst = worst.max(tensor_rel_err(&g.entry_adjoint, &numeric));
    Ok(GradcheckEntry {
        name,
        tensors: analytic.len() + 1,
        max_rel_err: worst,
    })
}

/// Builds a small random network and compares analytic gradients against
/// central differences of step `eps`.
pub fn fd_gradcheck(seed: u64, eps: f64, activation: Activation) -> Result<GradcheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(alloc::format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut net = ResidualNet::random(CHECK_DIMS, activation, &mut rng)?;
    randomize_biases(net.tensors_mut(), &mut rng)?;
    let d = CHECK_DIMS.width;
    let x = rng.uniform(CHECK_BATCH, CHECK_DIMS.inputs, -1.0, 1.0)?;
    let labels: Vec<usize> = (0..CHECK_BATCH).map(|i| i % CHECK_DIMS.classes).collect();
    let penalty = PenaltyFn::squared_l2();
    let mut entries = Vec::new();

    // Serial loss through S, every block and T.
    let full = StageParams {
        index: 0,
        range: 0..CHECK_DIMS.blocks,
        input: Some(net.input.clone()),
        blocks: net.blocks.clone(),
        output: Some(net.output.clone()),
        activation,
    };
    let loss_target = StageTarget::Loss {
        labels: labels.clone(),
    };
    entries.push(check_stage("serial loss", &full, &x, &loss_target, eps)?);

    // Synthetic losses on a first stage (with S) and an inner stage.
    let first = StageParams {
        output: None,
        ..full.clone()
    };
    let inner = StageParams {
        index: 1,
        input: None,
        ..first.clone()
    };
    let lambda_in = rng.uniform(CHECK_BATCH, d, -1.0, 1.0)?;
    let lambda_next = rng.uniform(CHECK_BATCH, d, -1.0, 1.0)?;
    let kappa_next = rng.uniform(CHECK_BATCH, d, -0.5, 0.5)?;
    let pen = StageTarget::Synthetic {
        lambda_next: lambda_next.clone(),
        kappa_next: Tensor::zeros(CHECK_BATCH, d),
        beta: CHECK_BETA,
        penalty,
    };
    let alm = StageTarget::Synthetic {
        lambda_next,
        kappa_next,
        beta: CHECK_BETA,
        penalty,
    };
    let a = check_stage(
        "penalty synthetic loss (first stage)",
        &first,
        &x,
        &pen,
        eps,
    )?;
    let b = check_stage(
        "penalty synthetic loss (inner stage)",
        &inner,
        &lambda_in,
        &pen,
        eps,
    )?;
    entries.push(a);
    entries.push(b);
    let a = check_stage("alm synthetic loss (first stage)", &first, &x, &alm, eps)?;
    let b = check_stage(
        "alm synthetic loss (inner stage)",
        &inner,
        &lambda_in,
        &alm,
        eps,
    )?;
    entries.push(a);
    entries.push(b);

    // λ-correction direction: gradient of
    //   (β/#) ψ(λ, X_prev) − ⟨κ, λ⟩ + stage objective started from λ.
    let x_prev = rng.uniform(CHECK_BATCH, d, -1.0, 1.0)?;
    let kappa = rng.uniform(CHECK_BATCH, d, -0.5, 0.5)?;
    let last = StageParams {
        index: 1,
        input: None,
        ..full.clone()
    };
    for (name, params, target) in [
        ("lambda correction (before last stage)", &last, &loss_target),
        ("lambda correction (before inner stage)", &inner, &alm),
    ] {
        let mut stage = Stage::new(params.clone());
        stage.forward(&lambda_in)?;
        let adjoint = stage.gradients(target)?.entry_adjoint;
        let mut batch =
            AuxBatch::standalone(alloc::vec![lambda_in.clone()], alloc::vec![kappa.clone()])?;
        batch.set_boundary(1, x_prev.clone())?;
        batch.set_adjoint(1, adjoint)?;
        let analytic = batch.aux_gradient(1, CHECK_BETA, penalty)?;
        let count = lambda_in.len() as f64;
        let numeric = central_difference(&lambda_in, eps, |l| {
            let mut s = Stage::new(params.clone());
            let stage_obj = s
                .forward(l)
                .and_then(|out| target.evaluate(&out.clone()))
                .map_or(f64::NAN, |(v, _)| v);
            let pen = psi(penalty, l, &x_prev).unwrap_or(f64::NAN);
            CHECK_BETA / count * pen - kappa.dot(l).unwrap_or(f64::NAN) + stage_obj
        })?;
        entries.push(GradcheckEntry {
            name,
            tensors: 1,
            max_rel_err: tensor_rel_err(&analytic, &numeric),
        });
    }

    // Keep `loss_phi` itself in the report: it feeds every backward pass.
    let logits = rng.uniform(CHECK_BATCH, CHECK_DIMS.classes, -2.0, 2.0)?;
    let (_, g) = loss_phi(&logits, &labels)?;
    let numeric = central_difference(&logits, eps, |z| {
        loss_phi(z, &labels).map_or(f64::NAN, |(v, _)| v)
    })?;
    entries.push(GradcheckEntry {
        name: "cross-entropy logits",
        tensors: 1,
        max_rel_err: tensor_rel_err(&g, &numeric),
    });

    Ok(GradcheckReport { eps, entries })
}
