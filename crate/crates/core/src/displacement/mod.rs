//! Height from tangent-space normals by least-squares integration.
//!
//! Slopes are forward differences: `p(x, y) = d(x+1, y) − d(x, y)` along
//! columns and `q(x, y) = d(x, y−1) − d(x, y)` toward the row above, which
//! is the tangent-space +Y direction. The normal equations are the graph
//! Laplacian of the valid texels, solved by conjugate gradients with a
//! multigrid preconditioner and fixed-order reductions.

use std::collections::VecDeque;

use rayon::prelude::*;
use thiserror::Error;

use crate::raster::{ColorSpace, MapKind, RasterError, RasterMap};

mod multigrid;

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("slope field has no valid texel")]
    Empty,
    #[error("conjugate gradients stopped at the {iterations}-iteration cap with relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("expected a tangent-space normal map, found kind {0}")]
    Kind(MapKind),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = IntegrationError> = std::result::Result<T, E>;

/// Smallest `n_z` accepted when converting normals to slopes.
pub const NZ_MIN: f32 = 0.1;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeField {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SlopeField {
    pub fn scaled(&self, k: f64) -> Self {
        SlopeField {
            p: self.p.iter().map(|v| v * k).collect(),
            q: self.q.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// Exact forward-difference slopes of a height field; every texel valid.
    pub fn from_heights(width: usize, height: usize, d: &[f64]) -> Self {
        let mut p = vec![0.0; width * height];
        let mut q = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if x + 1 < width {
                    p[i] = d[i + 1] - d[i];
                }
                if y > 0 {
                    q[i] = d[i - width] - d[i];
                }
            }
        }
        SlopeField {
            width,
            height,
            p,
            q,
            mask: vec![true; width * height],
        }
    }
}

pub fn normals_to_slopes(normals: &RasterMap) -> Result<SlopeField> {
    normals_to_slopes_with(normals, NZ_MIN)
}

/// `p = −n_x/n_z`, `q = −n_y/n_z` where `n_z ≥ nz_min`; other texels invalid.
pub fn normals_to_slopes_with(normals: &RasterMap, nz_min: f32) -> Result<SlopeField> {
    if !matches!(normals.kind(), MapKind::NormalsTangent | MapKind::NormalsSpecular) {
        return Err(IntegrationError::Kind(normals.kind()));
    }
    let n = normals.texels();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut mask = vec![false; n];
    for i in 0..n {
        let t = normals.texel(i);
        if normals.is_valid(i) && t[2] >= nz_min {
            p[i] = -(t[0] as f64) / t[2] as f64;
            q[i] = -(t[1] as f64) / t[2] as f64;
            mask[i] = true;
        }
    }
    Ok(SlopeField {
        width: normals.width(),
        height: normals.height(),
        p,
        q,
        mask,
    })
}

/// Result of [`integrate`]. `heights` keeps the `f64` solution.
#[derive(Debug, Clone)]
pub struct Integration {
    pub displacement: RasterMap,
    pub heights: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub components: usize,
}

const CHUNK: usize = 4096;

/// Dot product with a reduction order fixed by `CHUNK`, not by the pool.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum())
        .collect();
    partial.iter().sum()
}

struct Graph {
    w: usize,
    valid: Vec<bool>,
}

impl Graph {
    #[inline]
    fn right(&self, i: usize) -> bool {
        i % self.w + 1 < self.w && self.valid[i] && self.valid[i + 1]
    }

    #[inline]
    fn up(&self, i: usize) -> bool {
        i >= self.w && self.valid[i] && self.valid[i - self.w]
    }

    /// Connected-component label per texel (`usize::MAX` when invalid).
    fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.valid.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.valid.len() {
            if !self.valid[s] || label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            queue.push_back(s);
            while let Some(i) = queue.pop_front() {
                let mut visit = |j: usize| {
                    if label[j] == usize::MAX {
                        label[j] = count;
                        queue.push_back(j);
                    }
                };
                if self.right(i) {
                    visit(i + 1);
                }
                if i % self.w > 0 && self.right(i - 1) {
                    visit(i - 1);
                }
                if self.up(i) {
                    visit(i - self.w);
                }
                if i + self.w < self.valid.len() && self.up(i + self.w) {
                    visit(i + self.w);
                }
            }
            count += 1;
        }
        (label, count)
    }
}

fn remove_component_means(x: &mut [f64], label: &[usize], count: usize) {
    let mut sum = vec![0.0; count];
    let mut n = vec![0usize; count];
    for (v, &l) in x.iter().zip(label) {
        if l != usize::MAX {
            sum[l] += v;
            n[l] += 1;
        }
    }
    for (v, &l) in x.iter_mut().zip(label) {
        if l != usize::MAX {
            *v -= sum[l] / n[l] as f64;
        } else {
            *v = 0.0;
        }
    }
}

/// Least-squares heights with `mean = 0` on every connected component of
/// the valid region; invalid texels are zero and masked.
pub fn integrate(slopes: &SlopeField) -> Result<Integration> {
    let (w, h) = (slopes.width, slopes.height);
    let n = w * h;
    if !slopes.mask.iter().any(|&v| v) {
        return Err(IntegrationError::Empty);
    }
    let g = Graph {
        w,
        valid: slopes.mask.clone(),
    };
    // b = Bᵀg: each used edge i→j with target s adds +s at j and −s at i
    let mut b = vec![0.0f64; n];
    for i in 0..n {
        if g.right(i) {
            b[i + 1] += slopes.p[i];
            b[i] -= slopes.p[i];
        }
        if g.up(i) {
            b[i - w] += slopes.q[i];
            b[i] -= slopes.q[i];
        }
    }
    let (label, count) = g.components();
    remove_component_means(&mut b, &label, count);

    let level = multigrid::Level::new(
        w,
        h,
        (0..n).map(|i| g.right(i) as u8 as f64).collect(),
        (0..n).map(|i| g.up(i) as u8 as f64).collect(),
    );

    let cap = (10.0 * (n as f64).sqrt()).ceil() as usize;
    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![0.0f64; n];
    let mut iterations = 0;
    let mut residual = 0.0;
    if b_norm > 0.0 {
        let mg = multigrid::Hierarchy::new(level);
        let a = mg.fine();
        let mut r = b.clone();
        let mut z = mg.precondition(&r);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        loop {
            if dot(&r, &r).sqrt() / b_norm <= 0.5 * TOLERANCE {
                // confirm on the true residual before certifying
                a.apply(&x, &mut ap);
                let true_r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
                residual = dot(&true_r, &true_r).sqrt() / b_norm;
                if residual <= TOLERANCE {
                    break;
                }
                r = true_r;
                z = mg.precondition(&r);
                rz = dot(&r, &z);
                p.copy_from_slice(&z);
            }
            if iterations >= cap {
                a.apply(&x, &mut ap);
                let true_r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
                return Err(IntegrationError::NotConverged {
                    iterations,
                    residual: dot(&true_r, &true_r).sqrt() / b_norm,
                });
            }
            a.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
            z = mg.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
            iterations += 1;
        }
    }
    remove_component_means(&mut x, &label, count);
    let data = x.iter().map(|&v| v as f32).collect();
    let displacement = RasterMap::with_mask(
        w,
        h,
        1,
        data,
        ColorSpace::Raw,
        MapKind::Displacement,
        Some(slopes.mask.clone()),
    )?;
    Ok(Integration {
        displacement,
        heights: x,
        iterations,
        relative_residual: residual,
        components: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    fn centered(mut v: Vec<f64>) -> Vec<f64> {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
        v
    }

    #[test]
    fn slopes_from_normals() {
        let s = 1.0 / 2f32.sqrt();
        let data = vec![0.0, 0.0, 1.0, s, 0.0, s, 0.0, 0.9987492, 0.05];
        let m = RasterMap::new(3, 1, 3, data, ColorSpace::SignedUnit, MapKind::NormalsTangent).unwrap();
        let f = normals_to_slopes(&m).unwrap();
        assert_eq!((f.p[0], f.q[0]), (0.0, 0.0));
        assert!((f.p[1] + 1.0).abs() < 1e-6 && f.q[1] == 0.0);
        assert_eq!(f.mask, vec![true, true, false]);
    }

    #[test]
    fn zero_slopes_give_zero() {
        let f = SlopeField::from_heights(16, 8, &vec![0.0; 128]);
        let r = integrate(&f).unwrap();
        assert!(r.heights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_slope_plane() {
        let (w, h) = (40, 24);
        let (p0, q0) = (0.03, -0.02);
        let mut f = SlopeField::from_heights(w, h, &vec![0.0; w * h]);
        f.p.iter_mut().for_each(|v| *v = p0);
        f.q.iter_mut().for_each(|v| *v = q0);
        let r = integrate(&f).unwrap();
        let plane: Vec<f64> = (0..w * h).map(|i| p0 * (i % w) as f64 - q0 * (i / w) as f64).collect();
        assert!(rmse(&r.heights, &centered(plane)) <= 1e-6);
        assert!(r.relative_residual <= TOLERANCE);
    }

    #[test]
    fn sinusoid_recovered() {
        let (w, h) = (64, 48);
        let amp = 2.5;
        let d: Vec<f64> = (0..w * h)
            .map(|i| amp * (2.0 * PI * (i % w) as f64 / w as f64).sin() * (2.0 * PI * (i / w) as f64 / h as f64).sin())
            .collect();
        let r = integrate(&SlopeField::from_heights(w, h, &d)).unwrap();
        assert!(rmse(&r.heights, &centered(d)) <= 1e-3 * amp);
    }

    #[test]
    fn components_are_gauge_fixed_independently() {
        let (w, h) = (12, 6);
        let d: Vec<f64> = (0..w * h)
            .map(|i| {
                if i % w < 6 {
                    5.0 + (i / w) as f64
                } else {
                    -((i % w) as f64)
                }
            })
            .collect();
        let mut f = SlopeField::from_heights(w, h, &d);
        for y in 0..h {
            f.mask[y * w + 6] = false;
        }
        let r = integrate(&f).unwrap();
        assert_eq!(r.components, 2);
        for side in [0..6, 7..12] {
            let vals: Vec<f64> = (0..h)
                .flat_map(|y| side.clone().map(move |x| y * w + x))
                .map(|i| r.heights[i])
                .collect();
            assert!(vals.iter().sum::<f64>().abs() / vals.len() as f64 <= 1e-10);
        }
        assert_eq!(r.heights[6], 0.0);
    }

    #[test]
    fn holes_and_islands() {
        let (w, h) = (50, 40);
        let d: Vec<f64> = (0..w * h)
            .map(|i| ((i % w) as f64 * 0.2).sin() + (i / w) as f64 * 0.05)
            .collect();
        let mut f = SlopeField::from_heights(w, h, &d);
        for i in 0..w * h {
            let (x, y) = ((i % w) as f64 - 20.0, (i / w) as f64 - 18.0);
            if x * x + y * y < 40.0 || (i % 7 == 0 && i / w > 30) {
                f.mask[i] = false;
            }
        }
        let r = integrate(&f).unwrap();
        assert!(r.relative_residual <= TOLERANCE);
        assert!(r.components > 1);
    }

    #[test]
    fn linear_in_slopes() {
        let (w, h) = (30, 20);
        let d: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let f = SlopeField::from_heights(w, h, &d);
        let a = integrate(&f).unwrap();
        let b = integrate(&f.scaled(3.0)).unwrap();
        let scale = a.heights.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (x, y) in a.heights.iter().zip(&b.heights) {
            assert!((3.0 * x - y).abs() <= 1e-6 * 3.0 * scale);
        }
    }
}
