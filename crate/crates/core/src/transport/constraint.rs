use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

/// Busy flag per worker plus a log of every time a worker entered a
/// point-to-point transfer while already inside one.
#[derive(Debug)]
pub struct ChannelConstraint {
    busy: Vec<AtomicBool>,
    violations: Mutex<Vec<String>>,
}

impl ChannelConstraint {
    pub fn new(workers: usize) -> Self {
        Self {
            busy: (0..workers).map(|_| AtomicBool::new(false)).collect(),
            violations: Mutex::new(Vec::new()),
        }
    }

    /// Marks `worker` busy for a transfer with `peer`. Returns false and logs
    /// a violation if it already was.
    pub fn enter(&self, worker: usize, peer: usize) -> bool {
        let was = self.busy[worker].swap(true, Ordering::AcqRel);
        if was {
            self.violations
                .lock()
                .unwrap()
                .push(format!("worker {worker} started a transfer with {peer} while busy"));
        }
        !was
    }

    pub fn exit(&self, worker: usize) {
        self.busy[worker].store(false, Ordering::Release);
    }

    pub fn violations(&self) -> Vec<String> {
        self.violations.lock().unwrap().clone()
    }

    pub fn violation_count(&self) -> usize {
        self.violations.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_entry_is_logged() {
        let c = ChannelConstraint::new(2);
        assert!(c.enter(0, 1));
        assert!(!c.enter(0, 1));
        c.exit(0);
        assert!(c.enter(0, 1));
        assert_eq!(c.violation_count(), 1);
    }
}
