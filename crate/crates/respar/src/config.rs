//! Experiment configuration, loaded from TOML and validated on load.

use std::path::{Path, PathBuf};

use respar_core::decoupled::{partition, InitStrategy, Method, Schedule, Schedules};
use respar_core::{Activation, InitGains, NetDims, NetSpec, PenaltyFn, PenaltyKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Serial,
    Penalty,
    Alm,
}

impl Mode {
    pub fn method(self) -> Option<Method> {
        match self {
            Mode::Serial => None,
            Mode::Penalty => Some(Method::Penalty),
            Mode::Alm => Some(Method::AugmentedLagrangian),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyName {
    SquaredL2,
    L1,
    Linf,
}

impl From<PenaltyName> for PenaltyFn {
    fn from(p: PenaltyName) -> Self {
        PenaltyFn::new(match p {
            PenaltyName::SquaredL2 => PenaltyKind::SquaredL2,
            PenaltyName::L1 => PenaltyKind::L1,
            PenaltyName::Linf => PenaltyKind::LInf,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Multilevel,
    Warmstart,
    Random,
}

/// Optional overrides of the per-method default schedules. Piecewise
/// schedules are lists of `[epoch, value]` pairs starting at epoch 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub beta: Option<Vec<(usize, f64)>>,
    pub tau: Option<Vec<(usize, f64)>>,
    pub lr: Option<Vec<(usize, f64)>>,
    pub aux_lr: Option<Vec<(usize, f64)>>,
    pub lr_multiplier: Option<f64>,
    pub correction_max_iters: Option<usize>,
    pub noise_sigma_last: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub stages: usize,
    pub blocks: usize,
    pub width: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
    pub penalty: PenaltyName,
    /// Defaults to `random` for serial runs and `multilevel` otherwise.
    pub init: Option<InitName>,
    /// Coarse-network epochs for `multilevel`, full-network epochs for `warmstart`.
    pub init_epochs: usize,
    /// Multiplier on the Glorot-initialised weights of the input map.
    pub input_gain: f64,
    /// Multiplier on the second layer of every residual branch.
    pub branch_gain: f64,
    /// Mini-batch size; full batch when absent.
    pub batch_size: Option<usize>,
    pub train_size: usize,
    pub test_size: usize,
    /// Worker threads for the stage executor; defaults to one per stage,
    /// capped by the available parallelism.
    pub workers: Option<usize>,
    /// Record epoch wall time. When off the column is written as 0 so that
    /// repeated runs produce identical files.
    pub timing: bool,
    pub out: Option<PathBuf>,
    pub schedules: ScheduleOverrides,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Penalty,
            stages: 2,
            blocks: 60,
            width: 8,
            hidden: 8,
            epochs: 300,
            seed: 0,
            penalty: PenaltyName::SquaredL2,
            init: None,
            init_epochs: 300,
            input_gain: InitGains::TOY.input,
            branch_gain: InitGains::TOY.branch,
            batch_size: None,
            train_size: 200,
            test_size: 200,
            workers: None,
            timing: true,
            out: None,
            schedules: ScheduleOverrides::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> HarnessResult<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> HarnessResult<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            inputs: 2,
            width: self.width,
            hidden: self.hidden,
            blocks: self.blocks,
            classes: 3,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            dims: self.dims(),
            activation: Activation::Tanh,
            gains: InitGains {
                input: self.input_gain,
                branch: self.branch_gain,
            },
        }
    }

    pub fn init_name(&self) -> InitName {
        self.init.unwrap_or(match self.mode {
            Mode::Serial => InitName::Random,
            _ => InitName::Multilevel,
        })
    }

    /// Stage count actually trained: serial runs are a single stage.
    pub fn effective_stages(&self) -> usize {
        match self.mode {
            Mode::Serial => 1,
            _ => self.stages,
        }
    }

    pub fn init_strategy(&self) -> InitStrategy {
        match self.init_name() {
            InitName::Multilevel => InitStrategy::Multilevel {
                coarse_epochs: self.init_epochs,
            },
            InitName::Warmstart => InitStrategy::WarmStart {
                epochs: self.init_epochs,
            },
            InitName::Random => InitStrategy::Random,
        }
    }

    /// Method defaults with the configured overrides applied.
    pub fn schedules(&self) -> HarnessResult<Schedules> {
        let mut s = Schedules::for_method(self.mode.method().unwrap_or(Method::Penalty));
        let o = &self.schedules;
        let piecewise = |v: &Option<Vec<(usize, f64)>>| v.clone().map(Schedule::new).transpose();
        if let Some(b) = piecewise(&o.beta)? {
            s.beta = b;
        }
        if let Some(t) = piecewise(&o.tau)? {
            s.tau = t;
        }
        if let Some(l) = piecewise(&o.lr)? {
            s.lr = l;
        }
        if let Some(a) = piecewise(&o.aux_lr)? {
            s.aux_lr = Some(a);
        }
        if let Some(m) = o.lr_multiplier {
            s.lr_multiplier = m;
        }
        if let Some(c) = o.correction_max_iters {
            s.correction_max_iters = c;
        }
        if let Some(n) = o.noise_sigma_last {
            s.noise_sigma_last = n;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.width == 0 || self.hidden == 0 || self.blocks == 0 {
            return bad("width, hidden and blocks must be positive".into());
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if !(self.input_gain.is_finite() && self.branch_gain.is_finite()) {
            return bad("init gains must be finite".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        partition(self.blocks, self.effective_stages())?;
        if self.mode == Mode::Alm && self.penalty != PenaltyName::SquaredL2 {
            return bad("alm requires the squared-l2 penalty".into());
        }
        self.schedules()?;
        Ok(())
    }
}
