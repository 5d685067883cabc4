//! Peak-heap measurement of the training loop as a function of sequence
//! length. Online local learning keeps only the current traces, so the peak
//! must not grow with the number of timesteps.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::DecayConstants;
use crate::learning::{AdaMaxConfig, LocalObjective, NetworkOptimizer};
use crate::network::{FeedbackNoiseSpec, Network, NetworkTopology};
use crate::{Error, Result};

static ACTIVE: AtomicBool = AtomicBool::new(false);

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Wraps the system allocator and tracks live and peak heap bytes of the
/// current thread. Install with `#[global_allocator]`.
pub struct CountingAllocator;

impl CountingAllocator {
    pub fn is_active() -> bool {
        ACTIVE.load(Ordering::Relaxed)
    }

    pub fn live() -> usize {
        LIVE.try_with(Cell::get).unwrap_or(0)
    }

    /// Resets the peak to the current live size.
    pub fn reset_peak() {
        let live = Self::live();
        let _ = PEAK.try_with(|p| p.set(live));
    }

    pub fn peak() -> usize {
        PEAK.try_with(Cell::get).unwrap_or(0)
    }
}

fn grow(n: usize) {
    let _ = LIVE.try_with(|l| {
        let v = l.get() + n;
        l.set(v);
        let _ = PEAK.try_with(|p| p.set(p.get().max(v)));
    });
}

fn shrink(n: usize) {
    let _ = LIVE.try_with(|l| l.set(l.get().saturating_sub(n)));
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ACTIVE.store(true, Ordering::Relaxed);
        let p = System.alloc(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        ACTIVE.store(true, Ordering::Relaxed);
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        shrink(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            shrink(layout.size());
            grow(new_size);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryPoint {
    pub steps: usize,
    /// Peak heap above the pre-run baseline, forward + learning.
    pub learning_bytes: usize,
    /// Same, inference only.
    pub forward_bytes: usize,
    /// Heap still held after the run beyond the baseline.
    pub retained_bytes: isize,
}

fn run(net: &mut Network<f32>, steps: usize, batch: usize, learn: bool, seed: u64) -> Result<(usize, isize)> {
    let objective = LocalObjective::default();
    let mut optimizer = NetworkOptimizer::new(AdaMaxConfig::default(), net);
    let mut states = net.new_states(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<Array2<f32>> = net
        .layers
        .iter()
        .map(|l| Array2::zeros((batch, l.params.readout().nrows())))
        .collect();
    let n_in = net.n_input();
    let mut input = Array2::<f32>::zeros((batch, n_in));
    // One warm-up step so lazily sized buffers exist before the baseline.
    let mut step_once = |net: &mut Network<f32>, input: &mut Array2<f32>, rng: &mut ChaCha8Rng| -> Result<()> {
        input.mapv_inplace(|_| if rng.gen_bool(0.05) { 1.0 } else { 0.0 });
        let out = net.forward(&mut states, input.view(), Some(&mut *rng))?;
        if learn {
            for l in 0..net.layers.len() {
                let g = objective.layer_gradient(
                    &net.layers[l],
                    &states[l],
                    &out.caches[l],
                    &out.readouts[l],
                    out.masks[l].as_ref(),
                    targets[l].view(),
                )?;
                optimizer.apply(net, l, &g, 1e-3)?;
            }
        }
        Ok(())
    };
    step_once(net, &mut input, &mut rng)?;
    let baseline = CountingAllocator::live();
    CountingAllocator::reset_peak();
    for _ in 0..steps {
        step_once(net, &mut input, &mut rng)?;
    }
    let peak = CountingAllocator::peak().saturating_sub(baseline);
    let retained = CountingAllocator::live() as isize - baseline as isize;
    Ok((peak, retained))
}

/// Measures peak heap for each sequence length in `steps`. Requires
/// [`CountingAllocator`] to be the global allocator.
pub fn memory_probe(topology: &NetworkTopology, steps: &[usize], batch: usize, seed: u64) -> Result<Vec<MemoryPoint>> {
    // Any allocation flips the flag when the counter is installed.
    drop(Vec::<u8>::with_capacity(1));
    if !CountingAllocator::is_active() {
        return Err(Error::Config(
            "memory probe needs CountingAllocator as the global allocator".into(),
        ));
    }
    let decay = DecayConstants::new(1.0, 10.0, 5.0, 10.0)?;
    let mut points = Vec::with_capacity(steps.len());
    for &t in steps {
        let mut net = Network::<f32>::new(topology, decay, 1.0, &FeedbackNoiseSpec::default(), seed)?;
        let (learning_bytes, retained_bytes) = run(&mut net, t, batch, true, seed)?;
        let (forward_bytes, _) = run(&mut net, t, batch, false, seed)?;
        points.push(MemoryPoint {
            steps: t,
            learning_bytes,
            forward_bytes,
            retained_bytes,
        });
    }
    Ok(points)
}
