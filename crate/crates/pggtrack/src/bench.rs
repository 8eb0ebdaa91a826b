//! Peak-memory comparison of masked and full-image refinement.
//!
//! Allocation tracking is per thread: install [`CountingAlloc`] as the
//! global allocator of the binary, then wrap the measured work in
//! [`measure_peak`]. The refinement kernels run on the calling thread, so
//! the numbers are not disturbed by other threads.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use pggtrack_core::heatmap::BinaryMask;
use pggtrack_core::pgg::{affinity_memory_ratio, refine, EmbeddingSource, PggConfig};
use pggtrack_core::{GridShape, ScalarField, VectorField2};

use crate::error::CliError;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator that keeps per-thread live and peak byte counts.
pub struct CountingAlloc;

fn track(delta: isize) {
    ACTIVE.store(true, Ordering::Relaxed);
    // thread-local storage may already be gone during thread teardown
    let _ = LIVE.try_with(|live| {
        let v = live.get() + delta;
        live.set(v);
        let _ = PEAK.try_with(|p| {
            if v > p.get() {
                p.set(v);
            }
        });
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            track(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            track(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        track(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            track(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Whether [`CountingAlloc`] has seen any allocation in this process.
pub fn counting_active() -> bool {
    ACTIVE.load(Ordering::Relaxed)
}

/// Runs `f` and returns its result with the largest number of bytes it held
/// at once on this thread, above what was live before.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let base = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(base));
    let r = f();
    let peak = PEAK.with(Cell::get);
    (r, (peak - base).max(0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub occupancy: f64,
    pub masked_pixels: usize,
    /// Affinity entries of the masked path over those of the full path.
    pub affinity_ratio: f64,
    pub masked_peak_bytes: usize,
    pub full_peak_bytes: Option<usize>,
    pub peak_ratio: Option<f64>,
}

/// A mask with `round(occupancy * pixels)` pixels chosen by a seeded shuffle.
pub fn random_mask(shape: GridShape, occupancy: f64, seed: u64) -> Result<BinaryMask, CliError> {
    if !(0.0..=1.0).contains(&occupancy) {
        return Err(CliError::invalid("occupancy must lie in [0, 1]"));
    }
    let n = shape.len();
    let keep = (occupancy * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates over the first `keep` slots
    for i in 0..keep.min(n) {
        let j = i + (rand_core::RngCore::next_u64(&mut rng) % (n - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut bits = vec![false; n];
    for &i in &order[..keep] {
        bits[i] = true;
    }
    Ok(BinaryMask::new(shape, bits)?)
}

/// Refines random KE and SIE fields inside a random mask and, unless
/// `skip_full`, over the whole grid, recording peak allocation of each.
pub fn bench_pgg(shape: GridShape, occupancy: f64, seed: u64, skip_full: bool) -> Result<BenchReport, CliError> {
    if !counting_active() {
        return Err(CliError::invalid("allocation counting is not installed in this process"));
    }
    let mask = random_mask(shape, occupancy, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let d = Normal::new(0.0, 1.0).expect("unit normal");
    let ke = ScalarField::new(shape, (0..shape.len()).map(|_| d.sample(&mut rng)).collect())?;
    let sie = VectorField2::new(shape, (0..shape.len()).map(|_| [d.sample(&mut rng), d.sample(&mut rng)]).collect())?;
    let fields = [EmbeddingSource::Scalar(&ke), EmbeddingSource::Vector(&sie)];
    let cfg = PggConfig::default();

    let (masked, masked_peak) = measure_peak(|| refine(&fields, &mask, &cfg).map(|r| r.present_count()));
    masked?;
    let full_peak = if skip_full {
        None
    } else {
        let full = BinaryMask::full(shape);
        let (r, peak) = measure_peak(|| refine(&fields, &full, &cfg).map(|r| r.present_count()));
        r?;
        Some(peak)
    };
    Ok(BenchReport {
        width: shape.width(),
        height: shape.height(),
        occupancy,
        masked_pixels: mask.occupancy(),
        affinity_ratio: affinity_memory_ratio(&mask),
        masked_peak_bytes: masked_peak,
        full_peak_bytes: full_peak,
        peak_ratio: full_peak.map(|f| masked_peak as f64 / f as f64),
    })
}
