use ndarray::{Array2, Array4, ArrayView2};
use rand::Rng;

use super::{Event, EventStream};
use crate::error::{Error, Result};

/// Dense `[T, 2, H, W]` event counts (channel 0 = on, 1 = off).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub data: Array4<u32>,
    pub dt_ms: f64,
    pub source: String,
    pub start_us: u32,
}

impl FrameSequence {
    pub fn steps(&self) -> usize {
        self.data.shape()[0]
    }

    /// Flattened `[T, 2·H·W]` view used as network input.
    pub fn flat(&self) -> ArrayView2<'_, u32> {
        let t = self.steps();
        let n = self.data.len() / t.max(1);
        self.data.view().into_shape((t, n)).expect("frame data is contiguous")
    }

    pub fn to_input<A: ndarray::NdFloat>(&self) -> Array2<A> {
        self.flat().mapv(|c| A::from(c).unwrap())
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&c| c as u64).sum()
    }
}

/// Sums `factor x factor` pixel blocks into one pixel.
pub fn downsample_sum(stream: &EventStream, factor: u16) -> Result<EventStream> {
    if factor == 0 || !stream.width.is_multiple_of(factor) || !stream.height.is_multiple_of(factor) {
        return Err(Error::Config(format!(
            "downsample factor {factor} does not divide the {}x{} sensor",
            stream.width, stream.height
        )));
    }
    Ok(EventStream {
        width: stream.width / factor,
        height: stream.height / factor,
        events: stream
            .events
            .iter()
            .map(|e| Event {
                x: e.x / factor,
                y: e.y / factor,
                ..*e
            })
            .collect(),
    })
}

/// Keeps the `width x height` window whose top-left corner is `(x0, y0)`.
pub fn crop(stream: &EventStream, x0: u16, y0: u16, width: u16, height: u16) -> Result<EventStream> {
    if x0 as u32 + width as u32 > stream.width as u32 || y0 as u32 + height as u32 > stream.height as u32 {
        return Err(Error::Config(format!(
            "crop {width}x{height}+{x0}+{y0} exceeds the {}x{} sensor",
            stream.width, stream.height
        )));
    }
    Ok(EventStream {
        width,
        height,
        events: stream
            .events
            .iter()
            .filter(|e| e.x >= x0 && e.x < x0 + width && e.y >= y0 && e.y < y0 + height)
            .map(|e| Event {
                x: e.x - x0,
                y: e.y - y0,
                ..*e
            })
            .collect(),
    })
}

/// Counts events into `steps` half-open bins `[start + k·dt, start + (k+1)·dt)`.
/// Events outside the window are dropped.
pub fn bin_to_frames(stream: &EventStream, dt_ms: f64, steps: usize, start_us: u32) -> Result<FrameSequence> {
    if !(dt_ms > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {dt_ms}")));
    }
    let dt_us = dt_ms * 1000.0;
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut data = Array4::<u32>::zeros((steps, 2, h, w));
    let first = stream.events.partition_point(|e| e.t < start_us);
    for e in &stream.events[first..] {
        let k = ((e.t - start_us) as f64 / dt_us).floor() as usize;
        if k >= steps {
            break;
        }
        data[[k, e.polarity.channel(), e.y as usize, e.x as usize]] += 1;
    }
    Ok(FrameSequence {
        data,
        dt_ms,
        source: String::new(),
        start_us,
    })
}

/// Uniform integer start offset (ms) such that a full `duration_ms` slice fits.
pub fn random_slice<R: Rng>(duration_ms: f64, recording_len_ms: f64, rng: &mut R) -> Result<u64> {
    if recording_len_ms < duration_ms {
        return Err(Error::SampleTooShort {
            recording_ms: recording_len_ms,
            duration_ms,
        });
    }
    let max = (recording_len_ms - duration_ms).floor() as u64;
    Ok(rng.gen_range(0..=max))
}
