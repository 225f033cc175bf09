//! PSNR over mutually valid texels, seam diagnostics, and JSON reports.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::patch::PatchGrid;
use crate::raster::{ColorSpace, RasterError, RasterMap};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no mutually valid texels to compare")]
    EmptyMask,
    #[error("maps differ in shape: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("sample {value} at index {index} outside [0, 1]")]
    Range { index: usize, value: f32 },
    #[error("mask has {got} entries for {expected} texels")]
    MaskLength { expected: usize, got: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

/// Peak value for unit-range float maps.
pub const PEAK: f64 = 1.0;

fn encoded(v: f32, cs: ColorSpace) -> f64 {
    match cs {
        ColorSpace::SignedUnit => v as f64 * 0.5 + 0.5,
        _ => v as f64,
    }
}

/// Sum of squared errors and compared texel count.
pub fn squared_error(a: &RasterMap, b: &RasterMap, mask: Option<&[bool]>) -> Result<(f64, usize)> {
    let sa = (a.width(), a.height(), a.channels());
    let sb = (b.width(), b.height(), b.channels());
    if sa != sb {
        return Err(MetricError::Shape(sa, sb));
    }
    if let Some(m) = mask {
        if m.len() != a.texels() {
            return Err(MetricError::MaskLength {
                expected: a.texels(),
                got: m.len(),
            });
        }
    }
    let c = a.channels();
    let w = a.width();
    let (ca, cb) = (a.colorspace(), b.colorspace());
    // one partial sum per row, added in row order
    let rows: Vec<Result<(f64, usize)>> = (0..a.height())
        .into_par_iter()
        .map(|y| {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for x in 0..w {
                let i = y * w + x;
                if !(a.is_valid(i) && b.is_valid(i) && mask.is_none_or(|m| m[i])) {
                    continue;
                }
                for k in 0..c {
                    let (va, vb) = (encoded(a.texel(i)[k], ca), encoded(b.texel(i)[k], cb));
                    for (v, raw) in [(va, a.texel(i)[k]), (vb, b.texel(i)[k])] {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(MetricError::Range {
                                index: i * c + k,
                                value: raw,
                            });
                        }
                    }
                    let d = va - vb;
                    sum += d * d;
                }
                n += 1;
            }
            Ok((sum, n))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    for r in rows {
        let (s, n) = r?;
        total += s;
        count += n;
    }
    Ok((total, count))
}

/// `10·log10(1/MSE)` over texels valid in both maps and in `mask`.
/// Identical inputs give `f64::INFINITY`. Signed-unit maps are compared on
/// their `n/2 + 1/2` encoding.
pub fn psnr(a: &RasterMap, b: &RasterMap, mask: Option<&[bool]>) -> Result<f64> {
    psnr_counted(a, b, mask).map(|(db, _)| db)
}

/// [`psnr`] plus the number of compared texels.
pub fn psnr_counted(a: &RasterMap, b: &RasterMap, mask: Option<&[bool]>) -> Result<(f64, usize)> {
    let (sum, n) = squared_error(a, b, mask)?;
    if n == 0 {
        return Err(MetricError::EmptyMask);
    }
    let mse = sum / (n * a.channels()) as f64;
    if mse == 0.0 {
        return Ok((f64::INFINITY, n));
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10(), n))
}

fn db_serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEntry {
    #[serde(serialize_with = "db_serialize")]
    pub psnr_db: f64,
    pub texels: usize,
}

/// `{name → {psnr_db, texels}}`; infinite PSNR serializes as `"inf"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub entries: IndexMap<String, MetricEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn add(&mut self, name: impl Into<String>, a: &RasterMap, b: &RasterMap, mask: Option<&[bool]>) -> Result<f64> {
        let (db, texels) = psnr_counted(a, b, mask)?;
        self.entries.insert(name.into(), MetricEntry { psnr_db: db, texels });
        Ok(db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Largest neighbour step across patch borders divided by the largest step
/// elsewhere, over all channels. Border columns and rows are those where a
/// patch of `grid` starts or ends in source coordinates.
pub fn seam_ratio(map: &RasterMap, grid: &PatchGrid) -> f64 {
    let (w, h) = map.dims();
    let mut xb = vec![false; w];
    let mut yb = vec![false; h];
    let mark = |b: &mut Vec<bool>, edge: usize, pad: usize| {
        if edge > pad && edge - pad < b.len() {
            b[edge - pad - 1] = true;
        }
    };
    for &(ox, oy) in &grid.origins {
        for e in [ox, ox + grid.patch] {
            mark(&mut xb, e, grid.padding[0]);
        }
        for e in [oy, oy + grid.patch] {
            mark(&mut yb, e, grid.padding[2]);
        }
    }
    let mut border = 0.0f64;
    let mut interior = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (j, across) in [(x + 1 < w).then(|| (i + 1, xb[x])), (y + 1 < h).then(|| (i + w, yb[y]))]
                .into_iter()
                .flatten()
            {
                if !(map.is_valid(i) && map.is_valid(j)) {
                    continue;
                }
                let d = map
                    .texel(i)
                    .iter()
                    .zip(map.texel(j))
                    .map(|(a, b)| (a - b).abs() as f64)
                    .fold(0.0, f64::max);
                if across {
                    border = border.max(d);
                } else {
                    interior = interior.max(d);
                }
            }
        }
    }
    if interior == 0.0 {
        return if border == 0.0 { 0.0 } else { f64::INFINITY };
    }
    border / interior
}
