use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::time::Duration;

use super::{FedError, Message, Transcript, TranscriptRecord};

/// One end of an ordered, reliable message channel.
pub trait Link: Send {
    /// Delivers `msg` or reports that it could not be delivered.
    fn send(&mut self, msg: Message) -> Result<(), FedError>;
    /// Next message. `step` names the expected step for error reporting.
    fn recv(&mut self, step: u64) -> Result<Message, FedError>;
}

/// In-process link over `mpsc` queues. A zero timeout never blocks, which
/// suits the single-threaded interleaved driver.
pub struct MemLink {
    tx: Sender<Message>,
    rx: Receiver<Message>,
    timeout: Duration,
    transcript: Transcript,
}

/// Two connected ends sharing one transcript.
pub fn mem_pair(timeout: Duration, transcript: &Transcript) -> (MemLink, MemLink) {
    let (tx_a, rx_a) = channel();
    let (tx_b, rx_b) = channel();
    let a = MemLink {
        tx: tx_b,
        rx: rx_a,
        timeout,
        transcript: transcript.clone(),
    };
    let b = MemLink {
        tx: tx_a,
        rx: rx_b,
        timeout,
        transcript: transcript.clone(),
    };
    (a, b)
}

impl Link for MemLink {
    fn send(&mut self, msg: Message) -> Result<(), FedError> {
        // Logged before handing over, so the peer's reply is always logged later.
        self.transcript.push(TranscriptRecord::of(&msg));
        self.tx.send(msg).map_err(|_| FedError::Disconnected)
    }

    fn recv(&mut self, step: u64) -> Result<Message, FedError> {
        if self.timeout.is_zero() {
            return self.rx.try_recv().map_err(|e| match e {
                TryRecvError::Empty => FedError::Missing { step },
                TryRecvError::Disconnected => FedError::Disconnected,
            });
        }
        self.rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => FedError::Missing { step },
            RecvTimeoutError::Disconnected => FedError::Disconnected,
        })
    }
}

/// Wraps a link and refuses to deliver messages matching a predicate.
pub struct FaultyLink<L> {
    inner: L,
    drop_if: Box<dyn Fn(&Message) -> bool + Send>,
}

impl<L: Link> FaultyLink<L> {
    pub fn new(inner: L, drop_if: impl Fn(&Message) -> bool + Send + 'static) -> Self {
        Self {
            inner,
            drop_if: Box::new(drop_if),
        }
    }
}

impl<L: Link> Link for FaultyLink<L> {
    fn send(&mut self, msg: Message) -> Result<(), FedError> {
        if (self.drop_if)(&msg) {
            return Err(FedError::Dropped { step: msg.step() });
        }
        self.inner.send(msg)
    }

    fn recv(&mut self, step: u64) -> Result<Message, FedError> {
        self.inner.recv(step)
    }
}
