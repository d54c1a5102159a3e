use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::{Batch, BatchBuilder, BatchSpec, DataError};

struct State {
    next_to_start: usize,
    consumed: usize,
    ready: BTreeMap<usize, Result<Batch, DataError>>,
    cancelled: bool,
    peak_resident: usize,
}

struct Shared {
    state: Mutex<State>,
    changed: Condvar,
}

/// Featurizes batches on `P` worker threads and yields them in input order.
///
/// A batch may start only while fewer than `P + Q` batches are started but
/// not yet handed to the consumer, which bounds memory. The first error is
/// delivered at its batch's position and ends the stream.
pub struct Prefetcher {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    total: usize,
    done: bool,
}

impl Prefetcher {
    pub fn new(batches: Vec<BatchSpec>, builder: Arc<BatchBuilder>, parallelism: usize, capacity: usize) -> Self {
        assert!(parallelism >= 1 && capacity >= 1, "parallelism and queue capacity must be ≥ 1");
        let total = batches.len();
        let window = parallelism + capacity;
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                next_to_start: 0,
                consumed: 0,
                ready: BTreeMap::new(),
                cancelled: false,
                peak_resident: 0,
            }),
            changed: Condvar::new(),
        });
        let batches = Arc::new(batches);
        let workers = (0..parallelism.min(total.max(1)))
            .map(|_| {
                let (shared, batches, builder) = (shared.clone(), batches.clone(), builder.clone());
                std::thread::spawn(move || worker(&shared, &batches, &builder, window))
            })
            .collect();
        Self { shared, workers, total, done: total == 0 }
    }

    /// Largest number of batches that were started but not yet consumed.
    pub fn peak_resident(&self) -> usize {
        self.shared.state.lock().unwrap().peak_resident
    }

    fn shutdown(&mut self) {
        self.shared.state.lock().unwrap().cancelled = true;
        self.shared.changed.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: &Shared, batches: &[BatchSpec], builder: &BatchBuilder, window: usize) {
    loop {
        let idx = {
            let mut st = shared.state.lock().unwrap();
            loop {
                if st.cancelled || st.next_to_start >= batches.len() {
                    return;
                }
                if st.next_to_start - st.consumed < window {
                    break;
                }
                st = shared.changed.wait(st).unwrap();
            }
            let idx = st.next_to_start;
            st.next_to_start += 1;
            st.peak_resident = st.peak_resident.max(st.next_to_start - st.consumed);
            idx
        };
        let result = builder.build(&batches[idx]);
        let mut st = shared.state.lock().unwrap();
        st.ready.insert(idx, result);
        drop(st);
        shared.changed.notify_all();
    }
}

impl Iterator for Prefetcher {
    type Item = Result<Batch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let result = {
            let mut st = self.shared.state.lock().unwrap();
            let want = st.consumed;
            loop {
                if let Some(r) = st.ready.remove(&want) {
                    break r;
                }
                st = self.shared.changed.wait(st).unwrap();
            }
        };
        {
            let mut st = self.shared.state.lock().unwrap();
            st.consumed += 1;
            if st.consumed == self.total {
                self.done = true;
            }
        }
        self.shared.changed.notify_all();
        if result.is_err() {
            self.done = true;
            self.shutdown();
        }
        Some(result)
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.shutdown();
    }
}
