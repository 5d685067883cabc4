//! Event-camera data: file format, spatial/temporal preprocessing, dataset
//! loading and synthetic generators.

pub mod dataset;
pub mod format;
mod poisson;
pub mod synth;
mod transform;

pub use format::{parse_event_file, write_event_file, FormatError, ParsedStream};
pub use poisson::{poisson_regression_task, RegressionTask};
pub use transform::{bin_to_frames, crop, downsample_sum, random_slice, FrameSequence};

/// Brightness-change direction of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    /// Frame channel: 0 for on, 1 for off.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Microseconds.
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Time-sorted events from a `width x height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamp of the first event (0 for an empty stream).
    pub fn start_us(&self) -> u32 {
        self.events.first().map_or(0, |e| e.t)
    }

    /// Time between the first and last event, in milliseconds.
    pub fn duration_ms(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (b.t - a.t) as f64 / 1000.0,
            _ => 0.0,
        }
    }
}
