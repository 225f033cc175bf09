//! Masked separable Gaussian filtering and finite-difference gradients.
//!
//! Blurs are normalized convolutions: taps outside the image or on invalid
//! texels are dropped and the remaining weights renormalized, so a
//! constant field stays constant up to rounding and borders need no
//! padding rule.

use rayon::prelude::*;

/// Normalized taps for `σ`, radius `⌈3σ⌉`. `σ ≤ 0` is the identity.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Planar `f64` field with an optional validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn from_f32(width: usize, height: usize, channels: usize, data: &[f32]) -> Self {
        Field {
            width,
            height,
            channels,
            data: data.iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    pub fn texel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// `Σ w·m·v / Σ w·m` along rows then columns. Texels with no valid tap
/// come out zero.
pub fn blur(field: &Field, mask: Option<&[bool]>, sigma: f64) -> Field {
    let (w, h, c) = (field.width, field.height, field.channels);
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    // horizontal pass keeps numerator and denominator apart
    let mut num = vec![0.0f64; w * h * c];
    let mut den = vec![0.0f64; w * h];
    num.par_chunks_mut(w * c)
        .zip(den.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (nrow, drow))| {
            for x in 0..w {
                for (k, &t) in kernel.iter().enumerate() {
                    let sx = x as i64 + k as i64 - r;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let i = y * w + sx as usize;
                    if !valid(i) {
                        continue;
                    }
                    drow[x] += t;
                    for ch in 0..c {
                        nrow[x * c + ch] += t * field.data[i * c + ch];
                    }
                }
            }
        });
    let mut out = vec![0.0f64; w * h * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(y, orow)| {
        let mut acc = vec![0.0f64; c];
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut d = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let sy = y as i64 + k as i64 - r;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                let i = sy as usize * w + x;
                d += t * den[i];
                for ch in 0..c {
                    acc[ch] += t * num[i * c + ch];
                }
            }
            if d > 0.0 {
                for ch in 0..c {
                    orow[x * c + ch] = acc[ch] / d;
                }
            }
        }
    });
    Field {
        width: w,
        height: h,
        channels: c,
        data: out,
    }
}

/// Gradient of channel 0 in tangent orientation: `gx` toward +column,
/// `gy` toward the row above. Central differences where both neighbours
/// are valid, one-sided where only one is, zero otherwise.
pub fn gradient(field: &Field, mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
    let (w, h, c) = (field.width, field.height, field.channels);
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let v = |i: usize| field.data[i * c];
    let diff = |i: usize, fwd: Option<usize>, back: Option<usize>| -> f64 {
        let f = fwd.filter(|&j| valid(j));
        let b = back.filter(|&j| valid(j));
        match (f, b) {
            (Some(f), Some(b)) => 0.5 * (v(f) - v(b)),
            (Some(f), None) => v(f) - v(i),
            (None, Some(b)) => v(i) - v(b),
            (None, None) => 0.0,
        }
    };
    let pairs: Vec<(f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !valid(i) {
                return (0.0, 0.0);
            }
            let (x, y) = (i % w, i / w);
            let gx = diff(i, (x + 1 < w).then(|| i + 1), (x > 0).then(|| i - 1));
            let gy = diff(i, (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w));
            (gx, gy)
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Multi-source breadth-first nearest fill: each texel with `fill[i]` set
/// copies the closest (4-connected) texel whose `source` flag is set. Ties
/// resolve by scan order. Returns `false` where no source is reachable.
pub fn nearest_fill(data: &mut [f32], channels: usize, width: usize, source: &[bool], fill: &[bool]) -> Vec<bool> {
    let n = source.len();
    let mut from = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..n {
        if source[i] {
            from[i] = i;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        let nbrs = [
            (y > 0).then(|| i - width),
            (x > 0).then(|| i - 1),
            (x + 1 < width).then(|| i + 1),
            (i + width < n).then(|| i + width),
        ];
        for j in nbrs.into_iter().flatten() {
            if from[j] == usize::MAX {
                from[j] = from[i];
                queue.push_back(j);
            }
        }
    }
    let mut reached = vec![true; n];
    for i in 0..n {
        if !fill[i] {
            continue;
        }
        if from[i] == usize::MAX {
            reached[i] = false;
            continue;
        }
        let s = from[i];
        for ch in 0..channels {
            data[i * channels + ch] = data[s * channels + ch];
        }
    }
    reached
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(2.5);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn blur_keeps_constants_and_ignores_masked() {
        let mut f = Field::from_f32(20, 10, 1, &vec![0.25; 200]);
        let mut mask = vec![true; 200];
        for i in (0..200).step_by(3) {
            f.data[i] = 9.0;
            mask[i] = false;
        }
        let b = blur(&f, Some(&mask), 3.0);
        assert!(b.data.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn gradient_orientation() {
        // value grows to the right and toward the top row
        let (w, h) = (5, 4);
        let data: Vec<f32> = (0..w * h).map(|i| (i % w) as f32 * 2.0 - (i / w) as f32).collect();
        let (gx, gy) = gradient(&Field::from_f32(w, h, 1, &data), None);
        assert!(gx.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(gy.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn nearest_fill_copies_closest_source() {
        let mut data = vec![1.0, 0.0, 0.0, 0.0, 5.0];
        let source = [true, false, false, false, true];
        let fill = [false, true, true, true, false];
        let reached = nearest_fill(&mut data, 1, 5, &source, &fill);
        assert_eq!(data, vec![1.0, 1.0, 1.0, 5.0, 5.0]);
        assert!(reached.iter().all(|&r| r));
    }
}
