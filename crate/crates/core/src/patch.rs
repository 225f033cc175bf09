//! Patch lattices, reflective padding, and seamless sliding-window stitching.
//!
//! Overlapping outputs are blended with a separable raised-cosine window
//! and normalized per texel, so pointwise operators are tiling-invariant.
//! Accumulation runs in `f64` in origin order regardless of how patches
//! were scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{MapStack, RasterError, RasterMap};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("patch {patch} and stride {stride} must satisfy patch >= stride >= 1")]
    Geometry { patch: usize, stride: usize },
    #[error("{axis} extent {dim} is too small for patch {patch}: needs {pad} texels of padding, at most {max} allowed per edge")]
    TooSmall {
        axis: char,
        dim: usize,
        patch: usize,
        pad: usize,
        max: usize,
    },
    #[error("stack is {got:?} but the grid expects {expected:?}")]
    Mismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("patch {index} is {got:?}, expected {expected:?} with {channels} channels")]
    PatchShape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
        channels: usize,
    },
    #[error("{got} patches supplied for a grid of {expected}")]
    PatchCount { expected: usize, got: usize },
    #[error("texel ({0}, {1}) received zero blend weight")]
    ZeroWeight(usize, usize),
    #[error("operator failed on patch at origin ({}, {}): {source}", origin.0, origin.1)]
    Operator {
        origin: (usize, usize),
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = PatchError> = std::result::Result<T, E>;

/// Square-patch lattice over a reflectively padded source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride: usize,
    pub source_w: usize,
    pub source_h: usize,
    /// Padding `[left, right, top, bottom]`.
    pub padding: [usize; 4],
    /// Row-major origins in padded coordinates.
    pub origins: Vec<(usize, usize)>,
    pub columns: usize,
    pub rows: usize,
}

fn axis_padding(axis: char, dim: usize, patch: usize, stride: usize) -> Result<(usize, usize)> {
    let total = if dim >= patch {
        let rem = (dim - patch) % stride;
        if rem == 0 {
            0
        } else {
            stride - rem
        }
    } else {
        patch - dim
    };
    let before = total / 2;
    let after = total - before;
    // reflection without edge repeat reaches at most dim - 1 texels out
    let max = dim.saturating_sub(1);
    if after > max {
        return Err(PatchError::TooSmall {
            axis,
            dim,
            patch,
            pad: total,
            max,
        });
    }
    Ok((before, after))
}

/// Minimal padding so that `(padded − patch)` is a multiple of `stride`.
pub fn plan_grid(w: usize, h: usize, patch: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 || patch < stride {
        return Err(PatchError::Geometry { patch, stride });
    }
    let (l, r) = axis_padding('x', w, patch, stride)?;
    let (t, b) = axis_padding('y', h, patch, stride)?;
    let columns = (w + l + r - patch) / stride + 1;
    let rows = (h + t + b - patch) / stride + 1;
    let origins = (0..rows)
        .flat_map(|j| (0..columns).map(move |i| (i * stride, j * stride)))
        .collect();
    Ok(PatchGrid {
        patch,
        stride,
        source_w: w,
        source_h: h,
        padding: [l, r, t, b],
        origins,
        columns,
        rows,
    })
}

impl PatchGrid {
    pub fn padded_w(&self) -> usize {
        self.source_w + self.padding[0] + self.padding[1]
    }

    pub fn padded_h(&self) -> usize {
        self.source_h + self.padding[2] + self.padding[3]
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Blend margin used when none is configured: the overlap, at most half a patch.
    pub fn default_blend(&self) -> usize {
        (self.patch - self.stride).min(self.patch / 2)
    }

    /// Source texel feeding padded coordinate `(px, py)`.
    #[inline]
    pub fn source_texel(&self, px: usize, py: usize) -> (usize, usize) {
        (
            reflect(px as isize - self.padding[0] as isize, self.source_w),
            reflect(py as isize - self.padding[2] as isize, self.source_h),
        )
    }
}

/// Mirror index without repeating the edge texel.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn crop_map(map: &RasterMap, grid: &PatchGrid, origin: (usize, usize)) -> Result<RasterMap> {
    let p = grid.patch;
    let c = map.channels();
    let mut data = Vec::with_capacity(p * p * c);
    let mut mask = map.mask().map(|_| Vec::with_capacity(p * p));
    for y in 0..p {
        for x in 0..p {
            let (sx, sy) = grid.source_texel(origin.0 + x, origin.1 + y);
            data.extend_from_slice(map.at(sx, sy));
            if let Some(m) = mask.as_mut() {
                m.push(map.is_valid(sy * grid.source_w + sx));
            }
        }
    }
    Ok(RasterMap::with_mask(p, p, c, data, map.colorspace(), map.kind(), mask)?)
}

/// The padded crop at `origin`, bit-exact.
pub fn extract_one(stack: &MapStack, grid: &PatchGrid, origin: (usize, usize)) -> Result<MapStack> {
    if stack.dims() != (grid.source_w, grid.source_h) {
        return Err(PatchError::Mismatch {
            expected: (grid.source_w, grid.source_h),
            got: stack.dims(),
        });
    }
    let layers = stack
        .layers()
        .iter()
        .map(|m| crop_map(m, grid, origin))
        .collect::<Result<Vec<_>>>()?;
    Ok(MapStack::from_parts(layers, stack.layout().to_vec()))
}

/// Every patch of the grid, in origin order.
pub fn extract(stack: &MapStack, grid: &PatchGrid) -> Result<Vec<MapStack>> {
    grid.origins.par_iter().map(|&o| extract_one(stack, grid, o)).collect()
}

/// One-dimensional raised-cosine window over a patch of `len` texels.
pub fn window(len: usize, margin: usize) -> Vec<f64> {
    let m = margin.min(len / 2);
    let ramp = |k: usize| {
        if k < m {
            0.5 - 0.5 * (std::f64::consts::PI * (k as f64 + 0.5) / m as f64).cos()
        } else {
            1.0
        }
    };
    (0..len).map(|k| ramp(k) * ramp(len - 1 - k)).collect()
}

/// Running weighted sum of patch outputs on the padded canvas.
struct Accumulator {
    width: usize,
    channels: usize,
    scale: usize,
    weight: Vec<f64>,
    valid_weight: Vec<f64>,
    valid_sum: Vec<f64>,
    window: Vec<f64>,
}

impl Accumulator {
    fn new(grid: &PatchGrid, channels: usize, scale: usize, margin: usize) -> Self {
        let (w, h) = (grid.padded_w() * scale, grid.padded_h() * scale);
        Accumulator {
            width: w,
            channels,
            scale,
            weight: vec![0.0; w * h],
            valid_weight: vec![0.0; w * h],
            valid_sum: vec![0.0; w * h * channels],
            window: window(grid.patch * scale, margin * scale),
        }
    }

    fn add(&mut self, patch: &RasterMap, origin: (usize, usize)) {
        let p = patch.width();
        let c = self.channels;
        let (ox, oy) = (origin.0 * self.scale, origin.1 * self.scale);
        for y in 0..p {
            let wy = self.window[y];
            for x in 0..p {
                let wt = wy * self.window[x];
                let k = (oy + y) * self.width + ox + x;
                let src = patch.at(x, y);
                self.weight[k] += wt;
                let valid = patch.is_valid(y * p + x);
                if valid {
                    self.valid_weight[k] += wt;
                }
                if valid {
                    for ch in 0..c {
                        self.valid_sum[k * c + ch] += wt * src[ch] as f64;
                    }
                }
            }
        }
    }

    fn finish(self, grid: &PatchGrid, template: &RasterMap) -> Result<RasterMap> {
        let s = self.scale;
        let (w, h) = (grid.source_w * s, grid.source_h * s);
        let (x0, y0) = (grid.padding[0] * s, grid.padding[2] * s);
        let c = self.channels;
        let unit = template.kind().is_normals() && c == 3;
        let mut data = Vec::with_capacity(w * h * c);
        let mut mask = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let k = (y0 + y) * self.width + x0 + x;
                let total = self.weight[k];
                if total <= 0.0 {
                    return Err(PatchError::ZeroWeight(x, y));
                }
                // texels no patch marked valid come out zero and invalid
                let vw = self.valid_weight[k];
                mask.push(vw > 0.0);
                let start = data.len();
                for ch in 0..c {
                    data.push(if vw > 0.0 {
                        (self.valid_sum[k * c + ch] / vw) as f32
                    } else {
                        0.0
                    });
                }
                if vw > 0.0 && unit {
                    // blended unit vectors shrink; project back onto the sphere
                    let v = &mut data[start..];
                    let n = v.iter().map(|&a| a as f64 * a as f64).sum::<f64>().sqrt();
                    if n > 0.0 {
                        v.iter_mut()
                            .for_each(|a| *a = ((*a as f64 / n) as f32).clamp(-1.0, 1.0));
                    }
                }
            }
        }
        let all_valid = mask.iter().all(|&m| m);
        let mask = (!all_valid || template.mask().is_some()).then_some(mask);
        Ok(RasterMap::with_mask(
            w,
            h,
            c,
            data,
            template.colorspace(),
            template.kind(),
            mask,
        )?)
    }
}

fn check_patch(i: usize, patch: &RasterMap, side: usize, channels: usize) -> Result<()> {
    if patch.dims() != (side, side) || patch.channels() != channels {
        return Err(PatchError::PatchShape {
            index: i,
            expected: (side, side),
            got: patch.dims(),
            channels,
        });
    }
    Ok(())
}

/// Blends full-size patch outputs back into the unpadded source frame.
pub fn stitch(patches: &[RasterMap], grid: &PatchGrid, blend_margin: usize) -> Result<RasterMap> {
    stitch_scaled(patches, grid, blend_margin, 1)
}

/// [`stitch`] for operators whose output is `scale` times the input patch.
pub fn stitch_scaled(patches: &[RasterMap], grid: &PatchGrid, blend_margin: usize, scale: usize) -> Result<RasterMap> {
    if patches.len() != grid.len() {
        return Err(PatchError::PatchCount {
            expected: grid.len(),
            got: patches.len(),
        });
    }
    let channels = patches[0].channels();
    let mut acc = Accumulator::new(grid, channels, scale, blend_margin);
    for (i, (p, &o)) in patches.iter().zip(&grid.origins).enumerate() {
        check_patch(i, p, grid.patch * scale, channels)?;
        acc.add(p, o);
    }
    acc.finish(grid, &patches[0])
}

/// Tiling knobs; unset stride and blend fall back to their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tiling {
    pub patch: usize,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub blend: Option<usize>,
}

impl Tiling {
    pub fn new(patch: usize) -> Self {
        Tiling {
            patch,
            stride: None,
            blend: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.patch / 2).max(1))
    }

    pub fn grid(&self, w: usize, h: usize) -> Result<PatchGrid> {
        plan_grid(w, h, self.patch, self.stride())
    }
}

/// Extract → `f` per patch → stitch. Patches run in parallel in batches of
/// the pool width; blending happens in origin order, so the result does
/// not depend on the schedule. `scale` is the output/input size ratio.
pub fn apply_tiled<F, E>(stack: &MapStack, tiling: &Tiling, scale: usize, f: F) -> Result<RasterMap>
where
    F: Fn(MapStack, (usize, usize)) -> std::result::Result<RasterMap, E> + Sync,
    E: std::error::Error + Send + Sync + 'static,
{
    let (w, h) = stack.dims();
    let grid = tiling.grid(w, h)?;
    let blend = tiling.blend.unwrap_or_else(|| grid.default_blend());
    let batch = rayon::current_num_threads().max(1);
    let side = grid.patch * scale;
    let mut acc: Option<Accumulator> = None;
    let mut template: Option<RasterMap> = None;
    for (b, chunk) in grid.origins.chunks(batch).enumerate() {
        let outputs: Vec<Result<RasterMap>> = chunk
            .par_iter()
            .map(|&o| {
                let input = extract_one(stack, &grid, o)?;
                f(input, o).map_err(|e| PatchError::Operator {
                    origin: o,
                    source: Box::new(e),
                })
            })
            .collect();
        for (k, (out, &o)) in outputs.into_iter().zip(chunk).enumerate() {
            let out = out?;
            let acc = acc.get_or_insert_with(|| Accumulator::new(&grid, out.channels(), scale, blend));
            check_patch(b * batch + k, &out, side, acc.channels)?;
            acc.add(&out, o);
            if template.is_none() {
                template = Some(out);
            }
        }
    }
    acc.expect("grid has at least one origin")
        .finish(&grid, template.as_ref().expect("first patch kept"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{stack, ColorSpace, MapKind};
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize, c: usize) -> RasterMap {
        let data = (0..w * h * c).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let kind = if c == 1 { MapKind::Gray } else { MapKind::Texture };
        RasterMap::new(w, h, c, data, ColorSpace::Srgb, kind).unwrap()
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(plan_grid(1024, 1024, 512, 256).unwrap().len(), 9);
        assert_eq!(plan_grid(1024, 1024, 512, 256).unwrap().padding, [0; 4]);
        let g = plan_grid(512, 512, 512, 256).unwrap();
        assert_eq!(g.origins, vec![(0, 0)]);
        let g = plan_grid(4608, 3072, 1536, 768).unwrap();
        assert_eq!((g.columns, g.rows, g.len()), (5, 3, 15));
    }

    #[test]
    fn padding_is_minimal_and_lattice_ends_at_edge() {
        let g = plan_grid(1000, 700, 256, 128).unwrap();
        assert_eq!((g.padded_w() - 256) % 128, 0);
        assert!(g.padded_w() - 1000 < 128);
        let last = g.origins.last().unwrap();
        assert_eq!(last.0 + 256, g.padded_w());
        assert_eq!(last.1 + 256, g.padded_h());
    }

    #[test]
    fn too_small_source_is_rejected() {
        assert!(matches!(plan_grid(10, 10, 64, 32), Err(PatchError::TooSmall { .. })));
        assert!(matches!(plan_grid(10, 10, 4, 8), Err(PatchError::Geometry { .. })));
    }

    #[test]
    fn padded_corner_mirrors_source() {
        let m = ramp(20, 12, 1);
        let g = plan_grid(20, 12, 16, 8).unwrap();
        assert!(g.padding[0] > 0 && g.padding[2] > 0);
        let s = stack(vec![m.clone()]).unwrap();
        let p = extract_one(&s, &g, (0, 0)).unwrap();
        let (l, t) = (g.padding[0], g.padding[2]);
        assert_eq!(p.layers()[0].at(0, 0), m.at(l, t));
        assert_eq!(p.layers()[0].at(l, t), m.at(0, 0));
    }

    #[test]
    fn single_origin_patch_is_the_source() {
        let m = ramp(32, 32, 3);
        let g = plan_grid(32, 32, 32, 16).unwrap();
        let p = extract(&stack(vec![m.clone()]).unwrap(), &g).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].layers()[0], m);
    }

    #[test]
    fn zero_one_overlap_is_monotone() {
        let g = plan_grid(48, 32, 32, 16).unwrap();
        assert_eq!(g.len(), 2);
        let zero = RasterMap::filled(32, 32, &[0.0], ColorSpace::Linear, MapKind::Gray).unwrap();
        let one = RasterMap::filled(32, 32, &[1.0], ColorSpace::Linear, MapKind::Gray).unwrap();
        let out = stitch(&[zero, one], &g, 16).unwrap();
        let row: Vec<f32> = (0..48).map(|x| out.at(x, 10)[0]).collect();
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(row[0], 0.0);
        assert_eq!(row[47], 1.0);
    }

    #[test]
    fn constant_patches_stitch_exactly() {
        let g = plan_grid(100, 60, 32, 12).unwrap();
        let c = RasterMap::filled(32, 32, &[0.3, 0.7, 0.1], ColorSpace::Linear, MapKind::Texture).unwrap();
        let out = stitch(&vec![c; g.len()], &g, 20).unwrap();
        assert!(out.data().chunks(3).all(|t| t == [0.3, 0.7, 0.1]));
    }

    #[test]
    fn operator_error_names_origin() {
        #[derive(Debug, thiserror::Error)]
        #[error("boom")]
        struct Boom;
        let m = ramp(64, 64, 1);
        let s = stack(vec![m]).unwrap();
        let err = apply_tiled(&s, &Tiling::new(32), 1, |p, o| {
            if o == (16, 16) {
                Err(Boom)
            } else {
                Ok(p.layers()[0].clone())
            }
        })
        .unwrap_err();
        assert!(matches!(err, PatchError::Operator { origin: (16, 16), .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn identity_tiling_is_exact(w in 9usize..80, h in 9usize..80, patch in 8usize..33, frac in 1usize..5) {
            let stride = (patch * frac / 4).max(1);
            prop_assume!(plan_grid(w, h, patch, stride).is_ok());
            let m = ramp(w, h, 3);
            let s = stack(vec![m.clone()]).unwrap();
            let t = Tiling { patch, stride: Some(stride), blend: None };
            let out = apply_tiled(&s, &t, 1, |p, _| Ok::<_, PatchError>(p.layers()[0].clone())).unwrap();
            for (a, b) in out.data().iter().zip(m.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn weights_partition_unity(w in 9usize..90, h in 9usize..90, patch in 8usize..40, margin in 0usize..24) {
            let stride = (patch / 2).max(1);
            prop_assume!(plan_grid(w, h, patch, stride).is_ok());
            let g = plan_grid(w, h, patch, stride).unwrap();
            let one = RasterMap::filled(patch, patch, &[1.0], ColorSpace::Raw, MapKind::Generic).unwrap();
            let out = stitch(&vec![one; g.len()], &g, margin).unwrap();
            prop_assert!(out.data().iter().all(|v| (v - 1.0).abs() <= 1e-6));
        }
    }
}
