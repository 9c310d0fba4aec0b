//! Synthetic multi-channel test scenes.
//!
//! A scene is a shared luminance layer (Gaussian blobs plus axis-aligned
//! rectangles around mid-gray, clipped to `[0.1, 0.9]`) scaled into each
//! channel by a gain within ±3%. Channels therefore share structure and
//! mean level up to a small contrast difference, like the color planes of a
//! natural image.

use rand::Rng;

use crate::corruption::rng;
use crate::error::Result;
use crate::tensor::{ImageTensor, Shape};

const BLOBS: usize = 6;
const RECTANGLES: usize = 3;
const CHANNEL_GAIN_SPREAD: f64 = 0.03;
const BASE_MIN: f64 = 0.1;
const BASE_MAX: f64 = 0.9;

/// Draws a smooth piecewise scene with `shape.channels` correlated planes.
pub fn smooth_scene(shape: Shape, seed: u64) -> Result<ImageTensor> {
    let mut rng = rng(seed);
    let (h, w) = (shape.height, shape.width);
    let mut base = vec![0.5; h * w];

    for _ in 0..BLOBS {
        let cx: f64 = rng.random();
        let cy: f64 = rng.random();
        let radius = rng.random_range(0.05..0.25);
        let amp = rng.random_range(-0.4..0.4);
        let denom = 2.0 * radius * radius;
        for r in 0..h {
            let dy = r as f64 / h as f64 - cy;
            for c in 0..w {
                let dx = c as f64 / w as f64 - cx;
                base[r * w + c] += amp * (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    for _ in 0..RECTANGLES {
        let x0 = rng.random_range(0.0..0.7);
        let y0 = rng.random_range(0.0..0.7);
        let rw = rng.random_range(0.1..0.4);
        let rh = rng.random_range(0.1..0.4);
        let amp = rng.random_range(-0.3..0.3);
        for r in 0..h {
            let fy = r as f64 / h as f64;
            for c in 0..w {
                let fx = c as f64 / w as f64;
                if fx > x0 && fx < x0 + rw && fy > y0 && fy < y0 + rh {
                    base[r * w + c] += amp;
                }
            }
        }
    }

    // Clip the shared layer, not the channels, so channels differ only by
    // their gain.
    for v in base.iter_mut() {
        *v = v.clamp(BASE_MIN, BASE_MAX);
    }
    let planes = (0..shape.channels)
        .map(|_| {
            let gain = rng.random_range(1.0 - CHANNEL_GAIN_SPREAD..1.0 + CHANNEL_GAIN_SPREAD);
            base.iter().map(|&v| v * gain).collect()
        })
        .collect();
    ImageTensor::from_planes(h, w, planes)
}
