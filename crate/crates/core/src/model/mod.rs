//! The forecaster: configuration, network, losses, optimiser, training
//! loop and (recursive) inference.

mod forecast;
mod loss;
mod net;
mod optim;
mod train;

pub use forecast::{predict, recursive_forecast, Forecast};
pub use loss::{loss_grad, loss_nll, loss_rec, loss_total};
pub use net::{
    check_params, forward, fssm_block, init_fssm, init_params, latent_routes, ModelOutput, DOWNSAMPLE,
    SIGMA_FLOOR,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{train, write_history_csv, HistoryRow, TrainConfig, TrainData, TrainOutcome, Trainer};

use std::fmt;
use std::str::FromStr;

use crate::hsa::Fusion;
use crate::sfc::ScanKind;
use crate::wavelet::Basis;
use crate::{Error, Result};

/// Output head of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Point forecast trained with the L1 plus gradient loss.
    #[default]
    Det,
    /// Per-pixel mean and standard deviation trained with the Gaussian NLL.
    Gaussian,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Det => "det",
            Head::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "deterministic" => Ok(Head::Det),
            "gaussian" => Ok(Head::Gaussian),
            _ => Err(Error::invalid(format!("unknown head {s:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input frames.
    pub in_len: usize,
    /// Forecast frames.
    pub out_len: usize,
    /// Variables per frame.
    pub channels: usize,
    /// Feature width inside the state-space stack.
    pub hidden: usize,
    /// Number of frequency-enhanced state-space modules.
    pub n_fssm: usize,
    /// Scan routes per module: 1, 2 or 4.
    pub n_routes: usize,
    pub scan: ScanKind,
    /// Weight of the gradient loss.
    pub lambda: f32,
    pub head: Head,
    pub basis: Basis,
    pub fusion: Fusion,
    pub state_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_len: 14,
            out_len: 14,
            channels: 1,
            hidden: 32,
            n_fssm: 3,
            n_routes: 2,
            scan: ScanKind::HilbertTemporalFirst,
            lambda: 0.1,
            head: Head::Det,
            basis: Basis::Haar,
            fusion: Fusion::Hsa,
            state_size: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if self.in_len == 0 || self.out_len == 0 {
            return bad("input and output lengths must be positive");
        }
        if self.channels == 0 || self.state_size == 0 {
            return bad("channels and state size must be positive");
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return bad("hidden width must be an even number of at least 2");
        }
        if self.n_fssm == 0 {
            return bad("at least one state-space module is needed");
        }
        if ![1, 2, 4].contains(&self.n_routes) {
            return bad("route count must be 1, 2 or 4");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("gradient-loss weight must be finite and non-negative");
        }
        Ok(())
    }

    /// Output channels of the head: `out_len·channels`, doubled for the
    /// Gaussian head.
    pub fn head_outputs(&self) -> usize {
        let n = self.out_len * self.channels;
        match self.head {
            Head::Det => n,
            Head::Gaussian => 2 * n,
        }
    }
}
