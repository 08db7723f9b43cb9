//! Small synthetic grayscale patterns for demos and overfitting tests.

use std::f64::consts::PI;

use crate::tensor::{ImageTensor, Shape};

/// `count` distinct `size x size` grayscale patterns spanning `[-1, 1]`.
///
/// Eight pattern families (ramps, checkerboards, sinusoids, discs, stripes,
/// diagonals, quadrants, blobs) cycle with the index; later cycles vary the
/// family parameter.
pub fn patterns(count: usize, size: usize) -> Vec<ImageTensor> {
    (0..count).map(|i| pattern(i, size)).collect()
}

pub fn pattern(index: usize, size: usize) -> ImageTensor {
    let kind = index % 8;
    let p = (index / 8) as f64;
    let n = size as f64;
    let denom = (n - 1.0).max(1.0);
    let mut values = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / denom, c as f64 / denom);
            let v = match kind {
                0 => {
                    let a = p * 0.7;
                    x * a.cos() + y * a.sin()
                }
                1 => ((r + c + index / 8) % 2) as f64,
                2 => ((x + p * 0.5) * 2.0 * PI).sin() * 0.5 + 0.5,
                3 => {
                    let radius = 0.15 + 0.1 * (p % 4.0);
                    f64::from(((x - 0.5).powi(2) + (y - 0.5).powi(2)) < radius)
                }
                4 => f64::from(r % (2 + index / 8 % 3) == 0),
                5 => {
                    if (index / 8).is_multiple_of(2) {
                        (x - y).abs()
                    } else {
                        (x + y - 1.0).abs()
                    }
                }
                6 => {
                    if (index / 8).is_multiple_of(2) {
                        f64::from(x > 0.5 && y > 0.5)
                    } else {
                        f64::from((x < 0.5) ^ (y < 0.5))
                    }
                }
                _ => {
                    let cx = 0.3 + 0.4 * (p % 2.0);
                    (-((x - cx).powi(2) + (y - 0.5).powi(2)) * 8.0).exp()
                }
            };
            values.push(v);
        }
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let values = values.into_iter().map(|v| (v - lo) / span * 2.0 - 1.0).collect();
    ImageTensor::new(Shape::new(size, size, 1), values).expect("size * size values")
}

/// Diagonal cross: `+1` on both diagonals, `-1` elsewhere.
pub fn cross_trigger(size: usize) -> ImageTensor {
    let values = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            if r == c || r + c + 1 == size {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    ImageTensor::new(Shape::new(size, size, 1), values).expect("size * size values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_are_distinct_and_in_range() {
        let ps = patterns(16, 8);
        for (i, a) in ps.iter().enumerate() {
            let (lo, hi) = a.min_max();
            assert!(lo >= -1.0 && hi <= 1.0);
            for b in &ps[i + 1..] {
                assert!(a.max_abs_diff(b).unwrap() > 0.1);
            }
        }
    }

    #[test]
    fn cross_has_both_diagonals() {
        let t = cross_trigger(4);
        assert_eq!(t.get(0, 0, 0), 1.0);
        assert_eq!(t.get(0, 0, 3), 1.0);
        assert_eq!(t.get(0, 1, 0), -1.0);
    }
}
