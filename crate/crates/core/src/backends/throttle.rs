use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{BackendError, Capabilities, ChatBackend, ChatRequest, Completion, RateLimits};

/// In-flight cap plus a token bucket refilled at `requests_per_minute`.
#[derive(Debug)]
pub struct Throttle {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    bucket: Option<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    capacity: f64,
    per_sec: f64,
    last: Instant,
}

impl Bucket {
    /// Takes one token, returning how long to wait if none is available.
    fn take(&mut self) -> Option<Duration> {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.per_sec).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.per_sec))
        }
    }
}

/// Holds one in-flight slot until dropped.
pub struct Permit<'a> {
    throttle: &'a Throttle,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.throttle.in_flight.lock().unwrap();
        *n -= 1;
        self.throttle.released.notify_one();
    }
}

impl Throttle {
    pub fn new(limits: RateLimits) -> Self {
        let bucket = limits.requests_per_minute.map(|rpm| {
            let capacity = (limits.max_in_flight as f64).min(rpm).max(1.0);
            Mutex::new(Bucket {
                tokens: capacity,
                capacity,
                per_sec: rpm / 60.0,
                last: Instant::now(),
            })
        });
        Self {
            max_in_flight: limits.max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            bucket,
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Blocks until a slot and a rate token are both available.
    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.max_in_flight {
                n = self.released.wait(n).unwrap();
            }
            *n += 1;
        }
        let permit = Permit { throttle: self };
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = bucket.lock().unwrap().take();
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        permit
    }
}

/// Applies a [`Throttle`] to any backend.
pub struct Throttled<B> {
    inner: B,
    throttle: Throttle,
}

impl<B: ChatBackend> Throttled<B> {
    pub fn new(inner: B, limits: RateLimits) -> Self {
        Self {
            inner,
            throttle: Throttle::new(limits),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Throttled<B> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let _permit = self.throttle.acquire();
        self.inner.send(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, FnBackend, Role};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn in_flight_never_exceeds_cap() {
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let inner = FnBackend::new(Capabilities::ALL, move |_req| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        });
        let backend = Throttled::new(
            inner,
            RateLimits {
                max_in_flight: 3,
                requests_per_minute: None,
            },
        );
        let req = ChatRequest::new("m", vec![ChatMessage::text(Role::User, "q")]);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    for _ in 0..4 {
                        backend.complete(&req).unwrap();
                    }
                });
            }
        });
        let peak = peak.load(Ordering::SeqCst);
        assert!(peak <= 3, "peak {peak}");
        assert!(peak >= 2, "cap never exercised: {peak}");
    }

    #[test]
    fn bucket_paces_requests() {
        // 1200 rpm = one every 50 ms after a burst of 1
        let t = Throttle::new(RateLimits {
            max_in_flight: 1,
            requests_per_minute: Some(1200.0),
        });
        let start = Instant::now();
        for _ in 0..4 {
            drop(t.acquire());
        }
        assert!(start.elapsed() >= Duration::from_millis(140), "{:?}", start.elapsed());
    }
}
