//! UV-space rasters: the common currency of the pipeline.
//!
//! A [`RasterMap`] is a `width × height × channels` block of `f32`
//! samples, row-major with interleaved channels, row 0 at the top of the
//! UV square (V points up). Every map carries a colorspace tag and a kind
//! tag, plus an optional validity mask for texels outside UV coverage.
//! Maps are immutable once built; every constructor checks the tag
//! invariants.

pub(crate) mod io;

pub use io::{load_raster, read_rmap, save_raster, write_rmap, RawRaster, RMAP_HEADER_LEN, RMAP_MAGIC};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Allowed deviation of a decoded normal from unit length.
pub const UNIT_NORMAL_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {message}")]
    Codec { path: String, message: String },
    #[error("unsupported raster file {0}")]
    UnsupportedFormat(String),
    #[error("bad raster magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown colorspace code {0}")]
    UnknownColorspace(u32),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    Length {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("{channels} channels are not valid for kind {kind}")]
    Channels { kind: MapKind, channels: usize },
    #[error("sample {value} at index {index} outside the {colorspace} range")]
    Range {
        index: usize,
        value: f32,
        colorspace: ColorSpace,
    },
    #[error("normal at texel ({x}, {y}) has length {norm}")]
    NotUnit { x: usize, y: usize, norm: f32 },
    #[error("mask length {got} does not match {expected} texels")]
    MaskLength { expected: usize, got: usize },
    #[error("resolution mismatch: {expected:?} vs {got:?}")]
    Resolution {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("expected kind {expected}, found {got}")]
    Kind { expected: MapKind, got: MapKind },
    #[error("colorspace {got} not accepted here ({context})")]
    Colorspace { got: ColorSpace, context: &'static str },
    #[error("empty stack")]
    EmptyStack,
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorSpace {
    Srgb,
    Linear,
    SignedUnit,
    Raw,
}

impl ColorSpace {
    /// Code stored in the float raster header.
    pub fn code(self) -> u32 {
        match self {
            ColorSpace::Srgb => 0,
            ColorSpace::Linear => 1,
            ColorSpace::SignedUnit => 2,
            ColorSpace::Raw => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => ColorSpace::Srgb,
            1 => ColorSpace::Linear,
            2 => ColorSpace::SignedUnit,
            3 => ColorSpace::Raw,
            other => return Err(RasterError::UnknownColorspace(other)),
        })
    }

    /// Closed sample range, `None` for raw data.
    pub fn range(self) -> Option<(f32, f32)> {
        match self {
            ColorSpace::Srgb | ColorSpace::Linear => Some((0.0, 1.0)),
            ColorSpace::SignedUnit => Some((-1.0, 1.0)),
            ColorSpace::Raw => None,
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorSpace::Srgb => "srgb",
            ColorSpace::Linear => "linear",
            ColorSpace::SignedUnit => "signed-unit",
            ColorSpace::Raw => "raw",
        })
    }
}

impl FromStr for ColorSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            ColorSpace::Srgb,
            ColorSpace::Linear,
            ColorSpace::SignedUnit,
            ColorSpace::Raw,
        ]
        .into_iter()
        .find(|c| c.to_string() == s)
        .ok_or_else(|| format!("unknown colorspace {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Texture,
    DiffuseAlbedo,
    BakedTexture,
    SpecularAlbedo,
    NormalsObject,
    NormalsTangent,
    NormalsDiffuse,
    NormalsSpecular,
    Depth,
    Displacement,
    Gray,
    /// Irradiance and specular addends of the baking model; unbounded.
    Irradiance,
    /// Render output or operator output without a more specific contract.
    Generic,
}

impl MapKind {
    pub const ALL: [MapKind; 13] = [
        MapKind::Texture,
        MapKind::DiffuseAlbedo,
        MapKind::BakedTexture,
        MapKind::SpecularAlbedo,
        MapKind::NormalsObject,
        MapKind::NormalsTangent,
        MapKind::NormalsDiffuse,
        MapKind::NormalsSpecular,
        MapKind::Depth,
        MapKind::Displacement,
        MapKind::Gray,
        MapKind::Irradiance,
        MapKind::Generic,
    ];

    pub fn is_normals(self) -> bool {
        matches!(
            self,
            MapKind::NormalsObject | MapKind::NormalsTangent | MapKind::NormalsDiffuse | MapKind::NormalsSpecular
        )
    }

    pub fn accepts_channels(self, channels: usize) -> bool {
        match self {
            MapKind::Texture | MapKind::DiffuseAlbedo | MapKind::BakedTexture => channels == 3,
            MapKind::SpecularAlbedo => channels == 1 || channels == 3,
            k if k.is_normals() => channels == 3,
            MapKind::Depth | MapKind::Displacement | MapKind::Gray => channels == 1,
            MapKind::Irradiance => channels == 1 || channels == 3,
            _ => matches!(channels, 1 | 3 | 4),
        }
    }

    /// Colorspace used when the kind is decoded from an integer file.
    pub fn default_colorspace(self) -> ColorSpace {
        match self {
            MapKind::Texture | MapKind::DiffuseAlbedo | MapKind::BakedTexture | MapKind::Gray => ColorSpace::Srgb,
            MapKind::SpecularAlbedo => ColorSpace::Linear,
            k if k.is_normals() => ColorSpace::SignedUnit,
            MapKind::Depth => ColorSpace::SignedUnit,
            _ => ColorSpace::Raw,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Texture => "texture",
            MapKind::DiffuseAlbedo => "diffuse-albedo",
            MapKind::BakedTexture => "baked-texture",
            MapKind::SpecularAlbedo => "specular-albedo",
            MapKind::NormalsObject => "normals-object",
            MapKind::NormalsTangent => "normals-tangent",
            MapKind::NormalsDiffuse => "normals-diffuse",
            MapKind::NormalsSpecular => "normals-specular",
            MapKind::Depth => "depth",
            MapKind::Displacement => "displacement",
            MapKind::Gray => "gray",
            MapKind::Irradiance => "irradiance",
            MapKind::Generic => "generic",
        }
    }

    /// Channel names used in stack layouts.
    pub fn channel_names(self, channels: usize) -> Vec<String> {
        let names: &[&str] = match (self, channels) {
            (_, 4) => &["R", "G", "B", "A"],
            (k, 3) if k.is_normals() => &["X", "Y", "Z"],
            (MapKind::SpecularAlbedo, 3) => &["SR", "SG", "SB"],
            (MapKind::SpecularAlbedo, 1) => &["S"],
            (MapKind::Irradiance, 3) => &["ER", "EG", "EB"],
            (_, 3) => &["R", "G", "B"],
            (MapKind::Depth, 1) => &["D"],
            (MapKind::Displacement, 1) => &["H"],
            (MapKind::Gray, 1) => &["G"],
            (_, 1) => &["V"],
            _ => &[],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MapKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown map kind {s:?}"))
    }
}

/// A tagged UV-space raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    colorspace: ColorSpace,
    kind: MapKind,
    mask: Option<Vec<bool>>,
}

impl RasterMap {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        colorspace: ColorSpace,
        kind: MapKind,
    ) -> Result<Self> {
        Self::with_mask(width, height, channels, data, colorspace, kind, None)
    }

    /// Builds a map with an explicit validity mask (`true` = valid).
    pub fn with_mask(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        colorspace: ColorSpace,
        kind: MapKind,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let map = RasterMap {
            width,
            height,
            channels,
            data,
            colorspace,
            kind,
            mask,
        };
        map.validate()?;
        Ok(map)
    }

    /// Constant-valued map.
    pub fn filled(width: usize, height: usize, value: &[f32], colorspace: ColorSpace, kind: MapKind) -> Result<Self> {
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * value.len())
            .collect();
        Self::new(width, height, value.len(), data, colorspace, kind)
    }

    /// Checks every invariant of the tags, the mask and the data length.
    pub fn validate(&self) -> Result<()> {
        let texels = self.width * self.height;
        if self.data.len() != texels * self.channels {
            return Err(RasterError::Length {
                width: self.width,
                height: self.height,
                channels: self.channels,
                got: self.data.len(),
            });
        }
        if !self.kind.accepts_channels(self.channels) {
            return Err(RasterError::Channels {
                kind: self.kind,
                channels: self.channels,
            });
        }
        if let Some(mask) = &self.mask {
            if mask.len() != texels {
                return Err(RasterError::MaskLength {
                    expected: texels,
                    got: mask.len(),
                });
            }
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(index));
        }
        if let Some((lo, hi)) = self.colorspace.range() {
            if let Some(index) = self.data.iter().position(|&v| v < lo || v > hi) {
                return Err(RasterError::Range {
                    index,
                    value: self.data[index],
                    colorspace: self.colorspace,
                });
            }
        }
        if self.kind.is_normals() {
            if self.colorspace != ColorSpace::SignedUnit {
                return Err(RasterError::Colorspace {
                    got: self.colorspace,
                    context: "normal maps are stored signed-decoded",
                });
            }
            for (i, n) in self.data.chunks_exact(3).enumerate() {
                if !self.is_valid(i) {
                    continue;
                }
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if (norm - 1.0).abs() > UNIT_NORMAL_TOLERANCE {
                    return Err(RasterError::NotUnit {
                        x: i % self.width,
                        y: i / self.width,
                        norm,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn texels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// `true` when the texel at linear index `i` carries data.
    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.texels(), |m| m.iter().filter(|&&v| v).count())
    }

    /// Samples of the texel at linear index `i`.
    #[inline]
    pub fn texel(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        self.texel(y * self.width + x)
    }

    /// Consumes the map, returning its data and mask.
    pub fn into_parts(self) -> (Vec<f32>, Option<Vec<bool>>) {
        (self.data, self.mask)
    }

    /// Same map re-tagged with another kind (invariants rechecked).
    pub fn retag(self, kind: MapKind) -> Result<Self> {
        let RasterMap {
            width,
            height,
            channels,
            data,
            colorspace,
            mask,
            ..
        } = self;
        Self::with_mask(width, height, channels, data, colorspace, kind, mask)
    }

    /// Replaces the validity mask.
    pub fn replace_mask(self, mask: Option<Vec<bool>>) -> Result<Self> {
        let RasterMap {
            width,
            height,
            channels,
            data,
            colorspace,
            kind,
            ..
        } = self;
        Self::with_mask(width, height, channels, data, colorspace, kind, mask)
    }

    /// Errors unless this map has the given kind.
    pub fn expect_kind(&self, kind: MapKind) -> Result<()> {
        if self.kind != kind {
            return Err(RasterError::Kind {
                expected: kind,
                got: self.kind,
            });
        }
        Ok(())
    }

    pub fn expect_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(RasterError::Resolution {
                expected: dims,
                got: self.dims(),
            });
        }
        Ok(())
    }

    /// Crops a `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + w * c]);
        }
        let mask = self.mask.as_ref().map(|m| {
            (y0..y0 + h)
                .flat_map(|y| m[y * self.width + x0..y * self.width + x0 + w].iter().copied())
                .collect()
        });
        Self::with_mask(w, h, c, data, self.colorspace, self.kind, mask)
    }
}

/// Maps `[0, 1]` data to `[-1, 1]` by `2·v − 1`.
pub fn normalize_signed(map: &RasterMap) -> Result<RasterMap> {
    match map.colorspace() {
        ColorSpace::Srgb | ColorSpace::Linear => {}
        got => {
            return Err(RasterError::Colorspace {
                got,
                context: "normalize_signed expects srgb or linear input",
            })
        }
    }
    let data = map.data().iter().map(|&v| 2.0 * v - 1.0).collect();
    RasterMap::with_mask(
        map.width(),
        map.height(),
        map.channels(),
        data,
        ColorSpace::SignedUnit,
        map.kind(),
        map.mask().map(<[bool]>::to_vec),
    )
}

/// Inverse of [`normalize_signed`]: `(v + 1) / 2`, tagged `target`.
pub fn denormalize_unsigned(map: &RasterMap, target: ColorSpace) -> Result<RasterMap> {
    if map.colorspace() != ColorSpace::SignedUnit {
        return Err(RasterError::Colorspace {
            got: map.colorspace(),
            context: "denormalize_unsigned expects signed-unit input",
        });
    }
    if !matches!(target, ColorSpace::Srgb | ColorSpace::Linear) {
        return Err(RasterError::Colorspace {
            got: target,
            context: "denormalize_unsigned targets srgb or linear",
        });
    }
    let data = map.data().iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
    RasterMap::with_mask(
        map.width(),
        map.height(),
        map.channels(),
        data,
        target,
        map.kind(),
        map.mask().map(<[bool]>::to_vec),
    )
}

/// Equal-resolution maps concatenated channel-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    layers: Vec<RasterMap>,
    layout: Vec<String>,
}

/// Stacks maps of identical resolution; the layout names every channel.
pub fn stack(maps: Vec<RasterMap>) -> Result<MapStack> {
    let first = maps.first().ok_or(RasterError::EmptyStack)?;
    let dims = first.dims();
    for m in &maps[1..] {
        m.expect_dims(dims)?;
    }
    let layout = maps.iter().flat_map(|m| m.kind().channel_names(m.channels())).collect();
    Ok(MapStack { layers: maps, layout })
}

impl MapStack {
    pub fn unstack(self) -> Vec<RasterMap> {
        self.layers
    }

    pub fn layers(&self) -> &[RasterMap] {
        &self.layers
    }

    pub fn layout(&self) -> &[String] {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    pub fn height(&self) -> usize {
        self.layers[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.layers[0].dims()
    }

    pub fn channels(&self) -> usize {
        self.layout.len()
    }

    /// Texel-wise AND of the layer masks; `None` when every layer is fully valid.
    pub fn mask(&self) -> Option<Vec<bool>> {
        let masks: Vec<&[bool]> = self.layers.iter().filter_map(|l| l.mask()).collect();
        if masks.is_empty() {
            return None;
        }
        let n = self.width() * self.height();
        Some((0..n).map(|i| masks.iter().all(|m| m[i])).collect())
    }

    /// Common colorspace of every layer, or raw when they differ.
    pub fn colorspace(&self) -> ColorSpace {
        let cs = self.layers[0].colorspace();
        if self.layers.iter().all(|l| l.colorspace() == cs) {
            cs
        } else {
            ColorSpace::Raw
        }
    }

    /// Channel-interleaved samples of all layers, row-major.
    pub fn interleaved(&self) -> Vec<f32> {
        let n = self.width() * self.height();
        let mut out = Vec::with_capacity(n * self.channels());
        for i in 0..n {
            for layer in &self.layers {
                out.extend_from_slice(layer.texel(i));
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<MapStack> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.crop(x0, y0, w, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(MapStack {
            layers,
            layout: self.layout.clone(),
        })
    }

    pub(crate) fn from_parts(layers: Vec<RasterMap>, layout: Vec<String>) -> Self {
        MapStack { layers, layout }
    }
}
