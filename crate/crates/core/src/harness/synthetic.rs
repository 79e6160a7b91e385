//! Procedural RGB test scenes: a smooth background, flat shapes with sharp
//! edges, and a patch of oriented texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::image::Image;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
        }
    }
}

/// Deterministic `width x height` RGB scene for `seed`.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let color = |rng: &mut ChaCha20Rng| -> [f64; 3] {
        [
            rng.random_range(20.0..235.0),
            rng.random_range(20.0..235.0),
            rng.random_range(20.0..235.0),
        ]
    };
    let bg0 = color(&mut rng);
    let bg1 = color(&mut rng);
    let n_shapes = 3 + (rng.random_range(0..3usize));
    let shapes: Vec<(Shape, [f64; 3])> = (0..n_shapes)
        .map(|i| {
            let shape = if i % 2 == 0 {
                Shape::Disk {
                    cy: rng.random_range(0.1..0.9) * h,
                    cx: rng.random_range(0.1..0.9) * w,
                    r: rng.random_range(0.08..0.25) * w.min(h),
                }
            } else {
                let y0 = rng.random_range(0.05..0.6) * h;
                let x0 = rng.random_range(0.05..0.6) * w;
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.15..0.35) * h,
                    x1: x0 + rng.random_range(0.15..0.35) * w,
                }
            };
            (shape, color(&mut rng))
        })
        .collect();
    let tex_freq = rng.random_range(0.4..0.9);
    let tex_angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let tex = Shape::Rect {
        y0: rng.random_range(0.5..0.7) * h,
        x0: rng.random_range(0.0..0.4) * w,
        y1: h,
        x1: rng.random_range(0.6..1.0) * w,
    };
    let (sa, ca) = tex_angle.sin_cos();

    Image::from_fn(width, height, 3, |c, r, col| {
        let (y, x) = (r as f64, col as f64);
        let t = (x / w + y / h) / 2.0;
        let mut v = bg0[c] * (1.0 - t) + bg1[c] * t;
        for (shape, fill) in &shapes {
            if shape.contains(y, x) {
                v = fill[c];
            }
        }
        if tex.contains(y, x) {
            v += 35.0 * (tex_freq * (x * ca + y * sa)).sin();
        }
        v.clamp(0.0, 255.0).round()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(40, 32, 7);
        assert_eq!(a, synthetic_image(40, 32, 7));
        assert_ne!(a, synthetic_image(40, 32, 8));
        assert_eq!((a.width(), a.height(), a.channels()), (40, 32, 3));
        assert!(a
            .data()
            .iter()
            .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
    }

    #[test]
    fn scene_has_structure() {
        let a = synthetic_image(64, 64, 1);
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(var > 100.0);
    }
}
