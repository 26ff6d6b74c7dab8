use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::penalty::{PenaltyFn, PenaltyKind};

/// Piecewise-constant value over epochs: `steps[i] = (epoch, value)` holds
/// from `epoch` until the next step.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    steps: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            steps: vec![(0, value)],
        }
    }

    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        let s = Self { steps };
        s.validate()?;
        Ok(s)
    }

    /// Starts at `initial` and multiplies by `factor` at each listed epoch.
    pub fn stepped(initial: f64, factor: f64, epochs: &[usize]) -> Result<Self> {
        let mut steps = vec![(0, initial)];
        let mut v = initial;
        for &e in epochs {
            v *= factor;
            steps.push((e, v));
        }
        Self::new(steps)
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.steps[0].1, |&(_, v)| v)
    }

    /// Epochs (other than 0) at which the value changes.
    pub fn change_epochs(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().skip(1).map(|&(e, _)| e)
    }

    fn validate(&self) -> Result<()> {
        match self.steps.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Config("schedule must start at epoch 0".into())),
        }
        if self.steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "schedule epochs must be strictly increasing".into(),
            ));
        }
        if self.steps.iter().any(|(_, v)| v.is_nan()) {
            return Err(Error::Config("schedule values must not be NaN".into()));
        }
        Ok(())
    }

    fn require_positive(&self, what: &str) -> Result<()> {
        if self.steps.iter().any(|&(_, v)| !(v > 0.0)) {
            return Err(Error::Config(format!("{what} values must be positive")));
        }
        Ok(())
    }

    fn require_nonnegative(&self, what: &str) -> Result<()> {
        if self.steps.iter().any(|&(_, v)| !(v >= 0.0)) {
            return Err(Error::Config(format!("{what} values must be >= 0")));
        }
        Ok(())
    }
}

/// Decoupling flavour. `Penalty` is the augmented Lagrangian with every
/// multiplier pinned at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Penalty,
    AugmentedLagrangian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub beta: Schedule,
    pub tau: Schedule,
    pub lr: Schedule,
    /// Step size for auxiliary-variable corrections; follows `lr` when unset.
    pub aux_lr: Option<Schedule>,
    /// Step size for the multiplier update.
    pub lr_multiplier: f64,
    pub correction_max_iters: usize,
    pub noise_sigma_last: f64,
}

impl Schedules {
    fn common(beta: Schedule) -> Self {
        Self {
            beta,
            tau: Schedule::constant(f64::INFINITY),
            lr: Schedule::new(vec![(0, 0.1), (70, 0.01), (150, 0.001)]).expect("valid"),
            aux_lr: None,
            lr_multiplier: 1e-9,
            correction_max_iters: 1,
            noise_sigma_last: 0.0,
        }
    }

    /// β = 1, ×10 at epochs 100 and 250; lr 0.1, ÷10 at 70 and 150.
    pub fn penalty_default() -> Self {
        Self::common(Schedule::stepped(1.0, 10.0, &[100, 250]).expect("valid"))
    }

    /// β = 0.1, ×10 at epochs 100 and 250.
    pub fn alm_default() -> Self {
        Self::common(Schedule::stepped(0.1, 10.0, &[100, 250]).expect("valid"))
    }

    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Penalty => Self::penalty_default(),
            Method::AugmentedLagrangian => Self::alm_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.beta, &self.tau, &self.lr] {
            s.validate()?;
        }
        self.beta.require_positive("beta")?;
        self.tau.require_nonnegative("tau")?;
        self.lr.require_nonnegative("lr")?;
        if let Some(a) = &self.aux_lr {
            a.validate()?;
            a.require_nonnegative("aux_lr")?;
        }
        if !(self.lr_multiplier >= 0.0) {
            return Err(Error::Config("lr_multiplier must be >= 0".into()));
        }
        if self.correction_max_iters == 0 {
            return Err(Error::Config("correction_max_iters must be >= 1".into()));
        }
        if !(self.noise_sigma_last >= 0.0) {
            return Err(Error::Config("noise_sigma_last must be >= 0".into()));
        }
        Ok(())
    }

    pub fn hyper_at(&self, epoch: usize, method: Method, penalty: PenaltyFn) -> StepHyper {
        let lr = self.lr.at(epoch);
        StepHyper {
            method,
            penalty,
            beta: self.beta.at(epoch),
            tau: self.tau.at(epoch),
            lr,
            aux_lr: self.aux_lr.as_ref().map_or(lr, |s| s.at(epoch)),
            kappa_lr: self.lr_multiplier,
            max_corrections: self.correction_max_iters,
            noise_sigma: self.noise_sigma_last,
        }
    }
}

/// Everything one iteration needs, resolved for the current epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepHyper {
    pub method: Method,
    pub penalty: PenaltyFn,
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    pub aux_lr: f64,
    pub kappa_lr: f64,
    pub max_corrections: usize,
    pub noise_sigma: f64,
}

impl StepHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.method == Method::AugmentedLagrangian && self.penalty.kind != PenaltyKind::SquaredL2
        {
            return Err(Error::Config(
                "the multiplier update requires the squared-l2 penalty".into(),
            ));
        }
        if self.max_corrections == 0 {
            return Err(Error::Config("max_corrections must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_lookup() {
        let s = Schedule::stepped(1.0, 10.0, &[100, 250]).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(99), 1.0);
        assert_eq!(s.at(100), 10.0);
        assert_eq!(s.at(249), 10.0);
        assert_eq!(s.at(250), 100.0);
        assert_eq!(s.change_epochs().collect::<Vec<_>>(), vec![100, 250]);
    }

    #[test]
    fn default_learning_rates() {
        let s = Schedules::penalty_default();
        assert_eq!(s.lr.at(0), 0.1);
        assert!(s.lr.at(70) == 0.01);
        assert!(s.lr.at(150) == 0.001);
        assert_eq!(s.lr_multiplier, 1e-9);
        assert_eq!(Schedules::alm_default().beta.at(0), 0.1);
        let h = s.hyper_at(0, Method::Penalty, PenaltyFn::squared_l2());
        assert_eq!(h.aux_lr, h.lr);
        assert_eq!(h.max_corrections, 1);
    }

    #[test]
    fn invalid_schedules() {
        assert!(Schedule::new(vec![(1, 1.0)]).is_err());
        assert!(Schedule::new(vec![(0, 1.0), (5, 2.0), (5, 3.0)]).is_err());
        let mut s = Schedules::penalty_default();
        s.beta = Schedule::constant(0.0);
        assert!(s.validate().is_err());
        let mut s = Schedules::penalty_default();
        s.correction_max_iters = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn multiplier_needs_quadratic_penalty() {
        let s = Schedules::alm_default();
        let h = s.hyper_at(
            0,
            Method::AugmentedLagrangian,
            PenaltyFn::new(PenaltyKind::L1),
        );
        assert!(h.validate().is_err());
        let h = s.hyper_at(0, Method::Penalty, PenaltyFn::new(PenaltyKind::L1));
        assert!(h.validate().is_ok());
    }
}
