//! Three-ring toy classification set on `[−1, 1]²`.

use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const RADII: [f64; 2] = [0.5, 0.75];

#[derive(Clone, Debug, PartialEq)]
pub struct CirclesDataset {
    /// `n x 2`.
    pub points: Tensor,
    pub labels: Vec<usize>,
}

impl CirclesDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Class 0 inside radius 0.5, class 1 up to 0.75, class 2 beyond (including
/// the square's corners). Points on a circle belong to the inner class.
pub fn ring_label(x: f64, y: f64) -> usize {
    let r = libm::hypot(x, y);
    if r <= RADII[0] {
        0
    } else if r <= RADII[1] {
        1
    } else {
        2
    }
}

/// `n` points drawn uniformly from `[−1, 1]²`, labelled by [`ring_label`].
pub fn gen_circles(n: usize, seed: u64) -> CirclesDataset {
    let mut rng = Rng::new(seed);
    let points = rng.uniform(n, 2, -1.0, 1.0).expect("valid bounds");
    let labels = (0..n)
        .map(|r| ring_label(points.get(r, 0), points.get(r, 1)))
        .collect();
    CirclesDataset { points, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(ring_label(0.0, 0.0), 0);
        assert_eq!(ring_label(1.0, 1.0), 2);
        assert_eq!(ring_label(0.5, 0.0), 0);
        assert_eq!(ring_label(0.0, -0.75), 1);
        assert_eq!(ring_label(0.6, 0.0), 1);
        assert_eq!(ring_label(0.0, 0.9), 2);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let a = gen_circles(200, 5);
        assert_eq!(a, gen_circles(200, 5));
        assert_ne!(a, gen_circles(200, 6));
        assert_eq!(a.len(), 200);
        assert!(a.points.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for r in 0..a.len() {
            let (x, y) = (a.points.get(r, 0), a.points.get(r, 1));
            let d = (x * x + y * y).sqrt();
            let want = if d <= 0.5 {
                0
            } else if d <= 0.75 {
                1
            } else {
                2
            };
            assert_eq!(a.labels[r], want);
        }
        assert!(a.class_counts().iter().all(|&c| c > 20));
    }
}
