//! Single-in-flight staging channel between the simulation and the in-situ
//! side.
//!
//! `send` first blocks until the receiver is idle, meaning it has finished
//! the previous message and is parked in `recv` (backpressure, reported as
//! wait time). It then places the message and blocks again until the
//! receiver has taken it (handoff, reported as transfer time). A message is
//! never queued behind another one.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

struct Slot<T> {
    msg: Option<T>,
    receiver_idle: bool,
    sender_closed: bool,
    receiver_closed: bool,
}

struct Shared<T> {
    slot: Mutex<Slot<T>>,
    cv: Condvar,
}

pub struct StageSender<T> {
    shared: Arc<Shared<T>>,
}

pub struct StageReceiver<T> {
    shared: Arc<Shared<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SendTiming {
    pub wait: Duration,
    pub handoff: Duration,
}

/// The receiver went away; the undelivered message is returned.
#[derive(Debug)]
pub struct Disconnected<T>(pub T);

pub fn stage_channel<T>() -> (StageSender<T>, StageReceiver<T>) {
    let shared = Arc::new(Shared {
        slot: Mutex::new(Slot {
            msg: None,
            receiver_idle: false,
            sender_closed: false,
            receiver_closed: false,
        }),
        cv: Condvar::new(),
    });
    (
        StageSender {
            shared: Arc::clone(&shared),
        },
        StageReceiver { shared },
    )
}

impl<T> StageSender<T> {
    pub fn send(&self, msg: T) -> Result<SendTiming, Disconnected<T>> {
        let start = Instant::now();
        let mut slot = self.shared.slot.lock().expect("stage channel poisoned");
        let mut blocked = false;
        while !(slot.receiver_idle && slot.msg.is_none()) && !slot.receiver_closed {
            blocked = true;
            slot = self.shared.cv.wait(slot).expect("stage channel poisoned");
        }
        if slot.receiver_closed {
            return Err(Disconnected(msg));
        }
        // Zero when the receiver was already idle.
        let wait = if blocked { start.elapsed() } else { Duration::ZERO };
        let handoff_start = Instant::now();
        slot.msg = Some(msg);
        self.shared.cv.notify_all();
        while slot.msg.is_some() && !slot.receiver_closed {
            slot = self.shared.cv.wait(slot).expect("stage channel poisoned");
        }
        if let Some(msg) = slot.msg.take() {
            return Err(Disconnected(msg));
        }
        Ok(SendTiming {
            wait,
            handoff: handoff_start.elapsed(),
        })
    }
}

impl<T> Drop for StageSender<T> {
    fn drop(&mut self) {
        if let Ok(mut slot) = self.shared.slot.lock() {
            slot.sender_closed = true;
            self.shared.cv.notify_all();
        }
    }
}

impl<T> StageReceiver<T> {
    /// Marks the receiver idle and blocks for the next message. Returns
    /// `None` once the sender is gone.
    pub fn recv(&self) -> Option<T> {
        let mut slot = self.shared.slot.lock().expect("stage channel poisoned");
        slot.receiver_idle = true;
        self.shared.cv.notify_all();
        while slot.msg.is_none() && !slot.sender_closed {
            slot = self.shared.cv.wait(slot).expect("stage channel poisoned");
        }
        let msg = slot.msg.take();
        slot.receiver_idle = false;
        self.shared.cv.notify_all();
        msg
    }
}

impl<T> Drop for StageReceiver<T> {
    fn drop(&mut self) {
        if let Ok(mut slot) = self.shared.slot.lock() {
            slot.receiver_closed = true;
            self.shared.cv.notify_all();
        }
    }
}
