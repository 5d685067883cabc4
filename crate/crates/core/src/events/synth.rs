//! Synthetic event recordings produced by a simple DVS pixel model.
//!
//! Each pixel keeps a reference log-intensity and emits an on/off event
//! whenever the rendered scene drifts more than its contrast threshold away
//! from it. Thresholds carry per-pixel mismatch and background noise events
//! are sprinkled uniformly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Recording, Split};
use super::{Event, EventStream, Polarity};

pub const GESTURE_CLASSES: usize = 11;
pub const DIGIT_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct DvsModel {
    pub contrast: f64,
    pub mismatch: f64,
    /// Background events per pixel per second.
    pub noise_hz: f64,
}

impl Default for DvsModel {
    fn default() -> Self {
        DvsModel {
            contrast: 0.15,
            mismatch: 0.03,
            noise_hz: 0.05,
        }
    }
}

/// Samples `scene(x, y, t_ms)` (intensity in `[0, 1]`) at pixel centres every
/// millisecond for `duration_ms` and converts intensity changes into events.
pub fn emulate<F, R>(width: u16, height: u16, duration_ms: u32, model: &DvsModel, rng: &mut R, scene: F) -> EventStream
where
    F: Fn(f64, f64, f64) -> f64,
    R: Rng,
{
    let (w, h) = (width as usize, height as usize);
    let jitter = Normal::new(1.0, model.mismatch).unwrap();
    let thresholds: Vec<f64> = (0..w * h)
        .map(|_| model.contrast * jitter.sample(rng).max(0.2))
        .collect();
    let log_i = |v: f64| (v + 0.05).ln();
    let mut reference: Vec<f64> = (0..w * h)
        .map(|i| log_i(scene((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, 0.0)))
        .collect();
    let noise_p = model.noise_hz / 1000.0;
    let mut events = Vec::new();
    let mut frame = Vec::new();
    for ms in 1..duration_ms {
        frame.clear();
        let t = ms as f64;
        for (i, r) in reference.iter_mut().enumerate() {
            let (x, y) = (i % w, i / w);
            let v = log_i(scene(x as f64 + 0.5, y as f64 + 0.5, t));
            let th = thresholds[i];
            let polarity = if v - *r > th {
                Polarity::On
            } else if *r - v > th {
                Polarity::Off
            } else {
                if noise_p > 0.0 && rng.gen::<f64>() < noise_p {
                    let polarity = if rng.gen() { Polarity::On } else { Polarity::Off };
                    frame.push(Event {
                        t: 0,
                        x: x as u16,
                        y: y as u16,
                        polarity,
                    });
                }
                continue;
            };
            let steps = ((v - *r).abs() / th).floor();
            *r += (v - *r).signum() * steps * th;
            frame.push(Event {
                t: 0,
                x: x as u16,
                y: y as u16,
                polarity,
            });
        }
        for e in &mut frame {
            e.t = ms * 1000 + rng.gen_range(0..1000);
        }
        frame.sort_by_key(|e| e.t);
        events.extend_from_slice(&frame);
    }
    EventStream { width, height, events }
}

fn smooth_edge(d: f64) -> f64 {
    // 1 inside, 0 outside, linear over one pixel around the edge
    (0.5 - d).clamp(0.0, 1.0)
}

/// Centre of the moving blob for gesture `class` at time `t` (seconds),
/// in units of the sensor half-width.
fn gesture_path(class: usize, t: f64, speed: f64, phase: f64) -> (f64, f64, f64) {
    let w = 2.0 * PI * speed;
    let a = w * t + phase;
    match class {
        0 => (0.5 * a.cos(), 0.5 * a.sin(), 1.0),
        1 => (0.5 * a.cos(), -0.5 * a.sin(), 1.0),
        2 => (-0.7 + 1.4 * (speed * t + phase / (2.0 * PI)).fract(), 0.0, 1.0),
        3 => (0.7 - 1.4 * (speed * t + phase / (2.0 * PI)).fract(), 0.0, 1.0),
        4 => (0.0, 0.7 - 1.4 * (speed * t + phase / (2.0 * PI)).fract(), 1.0),
        5 => (0.0, -0.7 + 1.4 * (speed * t + phase / (2.0 * PI)).fract(), 1.0),
        6 => (0.6 * (2.0 * a).sin(), 0.3, 0.8),
        7 => (-0.3, 0.6 * (2.0 * a).sin(), 0.8),
        8 => (0.5 * (2.0 * a).sin(), 0.5 * (2.0 * a).sin(), 0.8),
        9 => (0.6 * a.sin(), 0.4 * (2.0 * a).sin(), 0.9),
        _ => (0.0, 0.0, 1.0 + 0.6 * (2.0 * a).sin()),
    }
}

/// One synthetic gesture: a bright disc following a class-specific path.
pub fn gesture_stream<R: Rng>(class: usize, duration_ms: u32, rng: &mut R) -> EventStream {
    let speed = rng.gen_range(0.8..1.25);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (ox, oy) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let radius = rng.gen_range(12.0..16.0);
    let half = 64.0;
    emulate(128, 128, duration_ms, &DvsModel::default(), rng, |x, y, t_ms| {
        let (cx, cy, scale) = gesture_path(class, t_ms / 1000.0, speed, phase);
        let (cx, cy) = (half + (cx + ox) * half, half + (cy + oy) * half);
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - radius * scale;
        0.1 + 0.8 * smooth_edge(d)
    })
}

// Seven-segment layout: (x0, y0, x1, y1) in a 10x18 glyph box.
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (1.0, 0.0, 9.0, 2.0),   // top
    (8.0, 1.0, 10.0, 9.0),  // upper right
    (8.0, 9.0, 10.0, 17.0), // lower right
    (1.0, 16.0, 9.0, 18.0), // bottom
    (0.0, 9.0, 2.0, 17.0),  // lower left
    (0.0, 1.0, 2.0, 9.0),   // upper left
    (1.0, 8.0, 9.0, 10.0),  // middle
];

const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
];

fn rect_distance(x: f64, y: f64, r: (f64, f64, f64, f64)) -> f64 {
    let dx = (r.0 - x).max(x - r.2).max(0.0);
    let dy = (r.1 - y).max(y - r.3).max(0.0);
    if dx == 0.0 && dy == 0.0 {
        -((x - r.0).min(r.2 - x).min(y - r.1).min(r.3 - y))
    } else {
        (dx * dx + dy * dy).sqrt()
    }
}

/// One synthetic saccade recording of a seven-segment digit on a 34x34
/// sensor: three 100 ms straight moves along a triangle, repeated.
pub fn digit_stream<R: Rng>(digit: usize, duration_ms: u32, rng: &mut R) -> EventStream {
    let mask = DIGIT_SEGMENTS[digit % 10];
    let scale = rng.gen_range(1.15..1.35);
    let slant = rng.gen_range(-0.15..0.15);
    let (ox, oy) = (rng.gen_range(9.0..13.0), rng.gen_range(4.0..7.0));
    let amp = rng.gen_range(2.5..3.5);
    let corners = [(0.0, 0.0), (amp, amp), (-amp, amp)];
    emulate(34, 34, duration_ms, &DvsModel::default(), rng, move |x, y, t_ms| {
        let leg = ((t_ms / 100.0) as usize) % 3;
        let f = (t_ms % 100.0) / 100.0;
        let (a, b) = (corners[leg], corners[(leg + 1) % 3]);
        let (sx, sy) = (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
        let gy = (y - oy - sy) / scale;
        let gx = (x - ox - sx) / scale - slant * (gy - 9.0);
        let d = SEGMENTS
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &r)| rect_distance(gx, gy, r))
            .fold(f64::INFINITY, f64::min);
        0.1 + 0.8 * smooth_edge(d * scale)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Gestures,
    Digits,
}

impl SynthKind {
    pub fn classes(self) -> usize {
        match self {
            SynthKind::Gestures => GESTURE_CLASSES,
            SynthKind::Digits => DIGIT_CLASSES,
        }
    }
}

/// A balanced set of `per_class` recordings per class, deterministic in `seed`.
pub fn synthetic_recordings(
    kind: SynthKind,
    per_class: usize,
    duration_ms: u32,
    split: Split,
    seed: u64,
) -> Vec<Recording> {
    let classes = kind.classes();
    let mut out = Vec::with_capacity(per_class * classes);
    for i in 0..per_class {
        for label in 0..classes {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ ((i * classes + label) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let stream = match kind {
                SynthKind::Gestures => gesture_stream(label, duration_ms, &mut rng),
                SynthKind::Digits => digit_stream(label, duration_ms, &mut rng),
            };
            out.push(Recording {
                name: format!("{}_{label:02}_{i:04}", split.as_str()),
                label,
                subject: (i % 29) as u32 + 1,
                lighting: "synthetic".into(),
                split,
                stream,
            });
        }
    }
    out
}
