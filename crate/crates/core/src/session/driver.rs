//! Blocking driver that runs a session's component calls to completion.
//!
//! The server has its own async driver; this one serves the CLI, tests and
//! embedding. Time comes from a [`Clock`] so tests can run on a manual one.

use std::sync::atomic::{AtomicI64, Ordering};

use super::{Invocation, Session, SessionError};
use crate::adapters::AdapterRegistry;
use crate::ids::Timestamp;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep_ms(&self, ms: u64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

/// Clock that only moves when told to; sleeping advances it instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicI64,
}

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        Self { now: AtomicI64::new(start_ms) }
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms as i64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }

    fn sleep_ms(&self, ms: u64) {
        self.advance(ms);
    }
}

/// Execute `first` and every follow-up call until the turn settles.
pub fn drive(
    session: &mut Session,
    registry: &AdapterRegistry,
    clock: &dyn Clock,
    first: Option<Invocation>,
) -> Result<(), SessionError> {
    let mut next = first;
    while let Some(inv) = next {
        let result = registry.invoke(&inv.adapter_id, &inv.request, inv.timeout_ms);
        if inv.delay_ms > 0 {
            clock.sleep_ms(inv.delay_ms);
        }
        next = session.complete_invocation(&inv, result, clock.now())?;
    }
    Ok(())
}

/// Resume a session after replay: run the call it was blocked on, if any.
pub fn resume(session: &mut Session, registry: &AdapterRegistry, clock: &dyn Clock) -> Result<(), SessionError> {
    let pending = session.pending_invocation();
    drive(session, registry, clock, pending)
}
