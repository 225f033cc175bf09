//! sRGB transfer functions and the luma transform used for conditioning.

use rayon::prelude::*;

use crate::raster::{ColorSpace, MapKind, RasterError, RasterMap, Result};

/// Luma weights and sRGB transfer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorConstants {
    pub luma: [f64; 3],
    /// Offset `a` of the power segment, `(c + a) / (1 + a)`.
    pub srgb_offset: f64,
    pub srgb_gamma: f64,
    /// Encoded-domain threshold of the linear segment.
    pub srgb_threshold: f64,
    pub srgb_slope: f64,
}

/// Rec.709 luma weights with the IEC 61966-2-1 sRGB curve.
pub const REC709: ColorConstants = ColorConstants {
    luma: [0.2126, 0.7152, 0.0722],
    srgb_offset: 0.055,
    srgb_gamma: 2.4,
    srgb_threshold: 0.04045,
    srgb_slope: 12.92,
};

impl ColorConstants {
    pub fn is_consistent(&self) -> bool {
        self.luma.iter().all(|&w| w > 0.0) && (self.luma.iter().sum::<f64>() - 1.0).abs() < 1e-12
    }
}

#[inline]
pub fn srgb_decode(c: f64) -> f64 {
    let k = &REC709;
    if c <= k.srgb_threshold {
        c / k.srgb_slope
    } else {
        ((c + k.srgb_offset) / (1.0 + k.srgb_offset)).powf(k.srgb_gamma)
    }
}

#[inline]
pub fn srgb_encode(l: f64) -> f64 {
    let k = &REC709;
    if l <= k.srgb_threshold / k.srgb_slope {
        l * k.srgb_slope
    } else {
        (1.0 + k.srgb_offset) * l.powf(1.0 / k.srgb_gamma) - k.srgb_offset
    }
}

fn convert(map: &RasterMap, from: ColorSpace, to: ColorSpace, f: fn(f64) -> f64) -> Result<RasterMap> {
    if map.colorspace() != from {
        return Err(RasterError::Colorspace {
            got: map.colorspace(),
            context: "colorspace conversion direction",
        });
    }
    let data = map
        .data()
        .par_iter()
        .map(|&v| f(v as f64).clamp(0.0, 1.0) as f32)
        .collect();
    RasterMap::with_mask(
        map.width(),
        map.height(),
        map.channels(),
        data,
        to,
        map.kind(),
        map.mask().map(<[bool]>::to_vec),
    )
}

pub fn srgb_to_linear(map: &RasterMap) -> Result<RasterMap> {
    convert(map, ColorSpace::Srgb, ColorSpace::Linear, srgb_decode)
}

pub fn linear_to_srgb(map: &RasterMap) -> Result<RasterMap> {
    convert(map, ColorSpace::Linear, ColorSpace::Srgb, srgb_encode)
}

/// Luma of one encoded RGB triple.
#[inline]
pub fn luma(rgb: &[f32]) -> f32 {
    let w = REC709.luma;
    (w[0] * rgb[0] as f64 + w[1] * rgb[1] as f64 + w[2] * rgb[2] as f64).clamp(0.0, 1.0) as f32
}

/// Grayscale conditioning map: luma on gamma-encoded values, not luminance.
pub fn luma_gray(map: &RasterMap) -> Result<RasterMap> {
    if map.channels() != 3 {
        return Err(RasterError::Channels {
            kind: MapKind::Gray,
            channels: map.channels(),
        });
    }
    if map.colorspace() != ColorSpace::Srgb {
        return Err(RasterError::Colorspace {
            got: map.colorspace(),
            context: "luma is computed on sRGB-encoded values",
        });
    }
    let data = map.data().par_chunks_exact(3).map(luma).collect();
    RasterMap::with_mask(
        map.width(),
        map.height(),
        1,
        data,
        ColorSpace::Srgb,
        MapKind::Gray,
        map.mask().map(<[bool]>::to_vec),
    )
}
