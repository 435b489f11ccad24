//! Two-party split-network training: the passive party ships its cut-layer
//! activations, the active party returns their gradients.

mod driver;
mod link;
mod party;

pub use driver::{
    run_federated_steps, run_federated_threaded, train_teacher_federated, MonolithicTeacher,
    TeacherRun,
};
pub use link::{mem_pair, FaultyLink, Link, MemLink};
pub use party::{ActiveParty, PartyConfig, PassiveParty, PendingStep};

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("protocol violation: expected step {expected}, got {got}")]
    StepMismatch { expected: u64, got: u64 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("payload shape {got:?} does not match expected {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("message for step {step} was not delivered")]
    Dropped { step: u64 },
    #[error("no message available for step {step}")]
    Missing { step: u64 },
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Cut-layer activations for one step, passive to active.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMessage {
    pub step: u64,
    pub row_ids: Vec<usize>,
    pub h_b: Tensor,
}

/// Gradient of the loss with respect to the activations, active to passive.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMessage {
    pub step: u64,
    pub grad: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Activation(ActivationMessage),
    Gradient(GradientMessage),
}

impl Message {
    pub fn step(&self) -> u64 {
        match self {
            Self::Activation(m) => m.step,
            Self::Gradient(m) => m.step,
        }
    }

    pub fn payload(&self) -> &Tensor {
        match self {
            Self::Activation(m) => &m.h_b,
            Self::Gradient(m) => &m.grad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    PassiveToActive,
    ActiveToPassive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    HB,
    GradHB,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step: u64,
    pub direction: Direction,
    pub payload: PayloadKind,
    pub shape: Vec<usize>,
    pub checksum: String,
}

impl TranscriptRecord {
    pub fn of(msg: &Message) -> Self {
        let (direction, payload) = match msg {
            Message::Activation(_) => (Direction::PassiveToActive, PayloadKind::HB),
            Message::Gradient(_) => (Direction::ActiveToPassive, PayloadKind::GradHB),
        };
        let t = msg.payload();
        let mut h = Sha256::new();
        for x in t.data() {
            h.update(x.to_le_bytes());
        }
        Self {
            step: msg.step(),
            direction,
            payload,
            shape: t.shape().to_vec(),
            checksum: hex::encode(&h.finalize()[..8]),
        }
    }
}

/// Shared, append-only log of every delivered message.
#[derive(Clone, Debug, Default)]
pub struct Transcript(Arc<Mutex<Vec<TranscriptRecord>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, r: TranscriptRecord) {
        self.0.lock().expect("transcript lock").push(r);
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.0.lock().expect("transcript lock").clone()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}
