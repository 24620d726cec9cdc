//! Simulated and real clocks for driving the exfiltration client.

use std::cell::Cell;
use std::rc::Rc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use dohcore::client::Clock;

/// Epoch second the simulated clock starts at for scenario runs.
///
/// The first eight decimal digits (`17550910`) become the session id, so
/// changing this constant changes every recorded query name.
pub const VIRTUAL_START_EPOCH: f64 = 1_755_091_000.0;

/// Deterministic clock that advances by exactly the requested sleep amounts.
///
/// Time is held in a shared cell so a transport can stamp packet events with
/// the same virtual timeline the client sleeps on. `time_scale` optionally
/// converts a fraction of each virtual sleep into a real one (0 runs the
/// whole scenario without blocking).
pub struct SimClock {
    now: Rc<Cell<f64>>,
    time_scale: f64,
}

impl SimClock {
    pub fn new(start_epoch: f64, time_scale: f64) -> Self {
        SimClock {
            now: Rc::new(Cell::new(start_epoch)),
            time_scale,
        }
    }

    /// Shared handle onto the virtual timeline for transports and loggers.
    pub fn shared_now(&self) -> Rc<Cell<f64>> {
        Rc::clone(&self.now)
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.now.get()
    }

    fn sleep(&mut self, seconds: f64) {
        if seconds <= 0.0 {
            return;
        }
        self.now.set(self.now.get() + seconds);
        if self.time_scale > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds * self.time_scale));
        }
    }
}

/// Wall-clock implementation used by the live network commands.
pub struct RealClock;

impl Clock for RealClock {
    fn now(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    }

    fn sleep(&mut self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}
