//! File boundaries: 8/16-bit PNG and the little-endian float raster format.
//!
//! Float raster layout: `"RMAP"`, then `u32` width, height, channels and
//! colorspace code, then `width × height × channels` little-endian `f32`
//! samples, row-major with interleaved channels. Validity masks travel in a
//! single-channel sidecar `<stem>.mask.rmap` (1.0 valid, 0.0 invalid) for
//! float files, and in the alpha channel for PNG files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};

use super::{ColorSpace, MapKind, RasterError, RasterMap, Result};

pub const RMAP_MAGIC: [u8; 4] = *b"RMAP";
pub const RMAP_HEADER_LEN: usize = 20;

/// Header and payload of a float raster, before any kind is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub colorspace: ColorSpace,
    pub data: Vec<f32>,
}

/// Writes one float raster record.
pub fn write_rmap<W: Write>(
    mut w: W,
    width: usize,
    height: usize,
    channels: usize,
    colorspace: ColorSpace,
    data: &[f32],
) -> std::io::Result<()> {
    debug_assert_eq!(data.len(), width * height * channels);
    let mut header = [0u8; RMAP_HEADER_LEN];
    header[..4].copy_from_slice(&RMAP_MAGIC);
    header[4..8].copy_from_slice(&(width as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(height as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(channels as u32).to_le_bytes());
    header[16..20].copy_from_slice(&colorspace.code().to_le_bytes());
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(data.len() * 4);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)
}

/// Parsed header fields: `(width, height, channels, colorspace)`.
pub(crate) fn parse_header(header: &[u8; RMAP_HEADER_LEN]) -> Result<(usize, usize, usize, ColorSpace)> {
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != RMAP_MAGIC {
        return Err(RasterError::BadMagic(magic));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let cs = ColorSpace::from_code(word(16) as u32)?;
    Ok((word(4), word(8), word(12), cs))
}

/// Reads one float raster record. Non-finite samples are rejected.
pub fn read_rmap<R: Read>(mut r: R) -> Result<RawRaster> {
    let io_err = |source| RasterError::Io {
        path: "<stream>".into(),
        source,
    };
    let mut header = [0u8; RMAP_HEADER_LEN];
    r.read_exact(&mut header).map_err(io_err)?;
    let (width, height, channels, colorspace) = parse_header(&header)?;
    let mut bytes = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut bytes).map_err(io_err)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(RasterError::NonFinite(i));
    }
    Ok(RawRaster {
        width,
        height,
        channels,
        colorspace,
        data,
    })
}

fn mask_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.rmap"))
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Loads a PNG or float raster as a map of `expected_kind`.
pub fn load_raster(path: impl AsRef<Path>, expected_kind: MapKind) -> Result<RasterMap> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "rmap" => load_rmap(path, expected_kind),
        "png" => load_png(path, expected_kind),
        _ => Err(RasterError::UnsupportedFormat(path.display().to_string())),
    }
}

fn load_rmap(path: &Path, kind: MapKind) -> Result<RasterMap> {
    let file = File::open(path).map_err(io_error(path))?;
    let raw = read_rmap(BufReader::new(file)).map_err(|e| match e {
        RasterError::Io { source, .. } => RasterError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })?;
    if !kind.accepts_channels(raw.channels) {
        return Err(RasterError::Channels {
            kind,
            channels: raw.channels,
        });
    }
    let sidecar = mask_sidecar(path);
    let mask = if sidecar.exists() {
        let file = File::open(&sidecar).map_err(io_error(&sidecar))?;
        let m = read_rmap(BufReader::new(file))?;
        if m.channels != 1 || (m.width, m.height) != (raw.width, raw.height) {
            return Err(RasterError::MaskLength {
                expected: raw.width * raw.height,
                got: m.data.len(),
            });
        }
        Some(m.data.iter().map(|&v| v > 0.5).collect())
    } else {
        None
    };
    RasterMap::with_mask(
        raw.width,
        raw.height,
        raw.channels,
        raw.data,
        raw.colorspace,
        kind,
        mask,
    )
}

fn load_png(path: &Path, kind: MapKind) -> Result<RasterMap> {
    let img = image::ImageReader::open(path)
        .map_err(io_error(path))?
        .decode()
        .map_err(|e| RasterError::Codec {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (samples, channels, max): (Vec<f32>, usize, f32) = match &img {
        DynamicImage::ImageLuma8(b) => (to_f32(b.as_raw()), 1, 255.0),
        DynamicImage::ImageLumaA8(b) => (to_f32(b.as_raw()), 2, 255.0),
        DynamicImage::ImageRgb8(b) => (to_f32(b.as_raw()), 3, 255.0),
        DynamicImage::ImageRgba8(b) => (to_f32(b.as_raw()), 4, 255.0),
        DynamicImage::ImageLuma16(b) => (to_f32(b.as_raw()), 1, 65535.0),
        DynamicImage::ImageLumaA16(b) => (to_f32(b.as_raw()), 2, 65535.0),
        DynamicImage::ImageRgb16(b) => (to_f32(b.as_raw()), 3, 65535.0),
        DynamicImage::ImageRgba16(b) => (to_f32(b.as_raw()), 4, 65535.0),
        _ => return Err(RasterError::UnsupportedFormat(path.display().to_string())),
    };
    let unit: Vec<f32> = samples.iter().map(|&v| v / max).collect();

    // An alpha channel becomes the validity mask unless the kind stores RGBA.
    let has_alpha = channels == 2 || (channels == 4 && !kind.accepts_channels(4));
    let (data, channels, mask) = if has_alpha {
        let c = channels - 1;
        let mut data = Vec::with_capacity(width * height * c);
        let mut mask = Vec::with_capacity(width * height);
        for px in unit.chunks_exact(channels) {
            data.extend_from_slice(&px[..c]);
            mask.push(px[c] > 0.5);
        }
        (data, c, Some(mask))
    } else {
        (unit, channels, None)
    };
    if !kind.accepts_channels(channels) {
        return Err(RasterError::Channels { kind, channels });
    }

    let colorspace = kind.default_colorspace();
    let data = match colorspace {
        ColorSpace::SignedUnit => decode_signed(data, channels, kind.is_normals(), mask.as_deref()),
        _ => data,
    };
    RasterMap::with_mask(width, height, channels, data, colorspace, kind, mask)
}

fn to_f32<T: Copy + Into<f32>>(raw: &[T]) -> Vec<f32> {
    raw.iter().map(|&v| v.into()).collect()
}

fn decode_signed(data: Vec<f32>, channels: usize, normals: bool, mask: Option<&[bool]>) -> Vec<f32> {
    let mut out: Vec<f32> = data.iter().map(|&v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect();
    if normals {
        // Integer quantization leaves decoded normals slightly off unit length.
        for (i, n) in out.chunks_exact_mut(channels).enumerate() {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if mask.is_some_and(|m| !m[i]) || len == 0.0 {
                n.iter_mut().for_each(|v| *v = 0.0);
            } else {
                n.iter_mut().for_each(|v| *v = (*v / len).clamp(-1.0, 1.0));
            }
        }
    }
    out
}

/// Saves a map as `.rmap` (bit-exact) or 16-bit `.png`.
pub fn save_raster(map: &RasterMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "rmap" => save_rmap(map, path),
        "png" => save_png(map, path),
        _ => Err(RasterError::UnsupportedFormat(path.display().to_string())),
    }
}

fn save_rmap(map: &RasterMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    write_rmap(
        &mut w,
        map.width(),
        map.height(),
        map.channels(),
        map.colorspace(),
        map.data(),
    )
    .and_then(|_| w.flush())
    .map_err(io_error(path))?;
    let sidecar = mask_sidecar(path);
    match map.mask() {
        Some(mask) => {
            let data: Vec<f32> = mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            let file = File::create(&sidecar).map_err(io_error(&sidecar))?;
            let mut w = BufWriter::new(file);
            write_rmap(&mut w, map.width(), map.height(), 1, ColorSpace::Raw, &data)
                .and_then(|_| w.flush())
                .map_err(io_error(&sidecar))?;
        }
        None if sidecar.exists() => {
            std::fs::remove_file(&sidecar).map_err(io_error(&sidecar))?;
        }
        None => {}
    }
    Ok(())
}

fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn save_png(map: &RasterMap, path: &Path) -> Result<()> {
    let encode = |v: f32, i: usize| -> Result<f32> {
        let e = match map.colorspace() {
            ColorSpace::SignedUnit => v * 0.5 + 0.5,
            ColorSpace::Raw if !(0.0..=1.0).contains(&v) => {
                return Err(RasterError::Range {
                    index: i,
                    value: v,
                    colorspace: ColorSpace::Raw,
                })
            }
            _ => v,
        };
        Ok(e)
    };
    let (w, h, c) = (map.width() as u32, map.height() as u32, map.channels());
    let mut out: Vec<u16> = Vec::with_capacity(map.texels() * (c + 1));
    for t in 0..map.texels() {
        for (k, &v) in map.texel(t).iter().enumerate() {
            out.push(quantize16(encode(v, t * c + k)?));
        }
        if map.mask().is_some() {
            out.push(if map.is_valid(t) { 65535 } else { 0 });
        }
    }
    let codec = |e: image::ImageError| RasterError::Codec {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let alpha = map.mask().is_some();
    let img = match (c, alpha) {
        (1, false) => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, out).unwrap()),
        (1, true) => DynamicImage::ImageLumaA16(ImageBuffer::<LumaA<u16>, _>::from_raw(w, h, out).unwrap()),
        (3, false) => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, out).unwrap()),
        (3, true) | (4, false) => DynamicImage::ImageRgba16(ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, out).unwrap()),
        _ => {
            return Err(RasterError::Channels {
                kind: map.kind(),
                channels: c,
            })
        }
    };
    img.save(path).map_err(codec)
}
