//! Per-thread instrumentation: floating point operations and live block storage.
//!
//! Kernels in [`crate::blockmat`] report their multiply/add counts here and every
//! [`DenseBlock`](crate::blockmat::DenseBlock) registers its storage on creation
//! and releases it on drop. Counters are thread-local, so concurrent
//! measurements on different threads do not interfere.

use std::cell::Cell;

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
    static LIVE_BYTES: Cell<u64> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn add_flops(n: usize) {
    FLOPS.with(|f| f.set(f.get() + n as u64));
}

pub(crate) fn alloc_bytes(n: usize) {
    LIVE_BYTES.with(|live| {
        let now = live.get() + n as u64;
        live.set(now);
        PEAK_BYTES.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn free_bytes(n: usize) {
    LIVE_BYTES.with(|live| live.set(live.get().saturating_sub(n as u64)));
}

/// Flops counted on this thread since it started.
pub fn flops() -> u64 {
    FLOPS.with(Cell::get)
}

/// Bytes currently held by live dense blocks on this thread.
pub fn live_bytes() -> u64 {
    LIVE_BYTES.with(Cell::get)
}

/// Resets the peak-storage watermark to the current live storage.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK_BYTES.with(|p| p.set(live));
}

pub fn peak_bytes() -> u64 {
    PEAK_BYTES.with(Cell::get)
}

/// Flop and storage usage of a measured region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub flops: u64,
    /// Peak live block storage above the level present when the region started.
    pub peak_bytes: u64,
}

/// Runs `f` and reports the flops it performed and the peak block storage it
/// held above the starting level. Nested calls reset the outer peak watermark.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, Usage) {
    let flops0 = flops();
    let live0 = live_bytes();
    reset_peak();
    let out = f();
    let usage = Usage {
        flops: flops() - flops0,
        peak_bytes: peak_bytes().saturating_sub(live0),
    };
    (out, usage)
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// distinct `x` or any non-positive value.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (y.ln() - my);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_tracks_peak_above_baseline() {
        let ((), usage) = measure(|| {
            alloc_bytes(100);
            alloc_bytes(50);
            free_bytes(150);
            add_flops(7);
        });
        assert_eq!(usage.flops, 7);
        assert_eq!(usage.peak_bytes, 150);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powi(3)))
            .collect();
        assert!((loglog_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(1.0, 1.0)]), None);
        assert_eq!(loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]), None);
    }
}
