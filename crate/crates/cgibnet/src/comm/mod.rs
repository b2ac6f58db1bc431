//! The communication layer: per-round graph-structure sampling via link
//! prediction with a relaxed Bernoulli, node-message sampling via Gaussian
//! reparameterization, masked mean aggregation, and the two KL regularizers
//! (structure vs Bernoulli(0.5), node bits vs a standard Gaussian).

pub mod kl;
pub mod layer;
pub mod rank;
pub mod sampling;

pub use kl::{kl_bernoulli_vs_half, kl_diag_gaussian_vs_standard};
pub use layer::{BitMask, CommNet, CommNoise, CommOutput, CommRoundState, ALPHA_CLAMP, SIGMA_FLOOR};
pub use rank::rank_bits;
pub use sampling::{sample_edge, sample_node_message, ReparamVariant};

use serde::{Deserialize, Serialize};

use crate::{CgibError, Result};

/// Mode switch for the message layer inside a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommMode {
    /// Full layer: learned structure + compressed node messages.
    Cgibnet,
    /// Complete graph, no structure sampling or regularizers (ablation).
    Full,
    /// No messages at all; agents act on their own observations.
    None,
}

impl std::fmt::Display for CommMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CommMode::Cgibnet => "cgibnet",
            CommMode::Full => "full",
            CommMode::None => "none",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommConfig {
    pub num_agents: usize,
    /// d, bits per node message.
    pub bits_per_message: usize,
    /// L, communication rounds.
    pub rounds: usize,
    /// Relaxed-Bernoulli temperature.
    pub temperature: f64,
    pub beta_s: f64,
    pub beta_x: f64,
    /// Deterministic evaluation: hard-thresholded edges, mean messages.
    pub eval_mode: bool,
    pub reparam: ReparamVariant,
}

impl CommConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.bits_per_message < 1 {
            bad.push("bits_per_message must be >= 1".to_string());
        }
        if self.rounds < 1 {
            bad.push("rounds must be >= 1".to_string());
        }
        if self.temperature <= 0.0 {
            bad.push("temperature must be > 0".to_string());
        }
        if self.beta_s < 0.0 {
            bad.push("beta_s must be >= 0".to_string());
        }
        if self.beta_x < 0.0 {
            bad.push("beta_x must be >= 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CgibError::InvalidConfig(bad))
        }
    }
}

/// Per-step KL bookkeeping: one entry per directed edge considered this
/// step, and per-(node,bit) totals. Sums match the step's SIB/XIB.
#[derive(Debug, Clone, Default)]
pub struct KlLedger {
    pub per_edge_kl: Vec<((usize, usize), f64)>,
    /// Row-major [num_agents x bits].
    pub per_bit_kl: Vec<f64>,
    pub num_agents: usize,
    pub bits: usize,
}

impl KlLedger {
    pub fn new(num_agents: usize, bits: usize) -> Self {
        KlLedger {
            per_edge_kl: Vec::new(),
            per_bit_kl: vec![0.0; num_agents * bits],
            num_agents,
            bits,
        }
    }

    pub fn bit_kl(&self, node: usize, bit: usize) -> f64 {
        self.per_bit_kl[node * self.bits + bit]
    }

    pub fn sib_total(&self) -> f64 {
        self.per_edge_kl.iter().map(|(_, v)| v).sum()
    }

    pub fn xib_total(&self) -> f64 {
        self.per_bit_kl.iter().sum()
    }

    /// Merge another step's ledger into an episode accumulator.
    pub fn absorb(&mut self, other: &KlLedger) {
        self.per_edge_kl.extend_from_slice(&other.per_edge_kl);
        for (a, b) in self.per_bit_kl.iter_mut().zip(&other.per_bit_kl) {
            *a += b;
        }
    }
}
