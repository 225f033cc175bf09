//! The five translation maps behind one operator interface.
//!
//! | stage | input stack          | output                         |
//! |-------|----------------------|--------------------------------|
//! | zeta  | `R G B` texture      | texture, 8× larger             |
//! | delta | `R G B D`            | diffuse albedo (sRGB)          |
//! | psi   | `R G B` albedo       | specular albedo (1 ch, linear) |
//! | rho   | `G X Y Z` tangent    | specular normals (tangent)     |
//! | sigma | `G X Y Z` object     | diffuse normals (object)       |
//!
//! Reference backends are analytic stand-ins that honour each contract;
//! trained models plug in through [`ExternalOperator`].

mod external;
pub mod filter;
mod reference;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::{apply_tiled, PatchError, Tiling};
use crate::raster::{ColorSpace, MapKind, MapStack, RasterError, RasterMap};
use crate::shading::ShadingError;

pub use external::ExternalOperator;
pub use reference::{DelightDelta, DiffNormalsSigma, SpecAlbedoPsi, SpecNormalsRho, SrZeta};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("{name}: input layout {got:?} does not match {expected:?}")]
    Layout {
        name: String,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("{name}: input is {got:?}, expected {expected:?} (pass --any-size to accept other sizes)")]
    InputSize {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("delta reference backend needs the lighting rig and mesh")]
    MissingRig,
    #[error("protocol violation: expected {expected}, got {got}")]
    Protocol { expected: String, got: String },
    #[error("operator child `{command}` exited with {status}")]
    Crash { command: String, status: String },
    #[error("operator child `{command}` gave no response within {seconds} s")]
    Timeout { command: String, seconds: f64 },
    #[error("cannot start operator child `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("operator output breaks its map contract: {0}")]
    Contract(#[source] RasterError),
    #[error(transparent)]
    Tiled(#[from] PatchError),
    #[error(transparent)]
    Shading(#[from] ShadingError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = OperatorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Zeta,
    Delta,
    Psi,
    Rho,
    Sigma,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Zeta, Stage::Delta, Stage::Psi, Stage::Rho, Stage::Sigma];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Zeta => "zeta",
            Stage::Delta => "delta",
            Stage::Psi => "psi",
            Stage::Rho => "rho",
            Stage::Sigma => "sigma",
        }
    }

    pub fn contract(self) -> Contract {
        let (inputs, kind, channels, cs, scale): (&[(MapKind, usize)], _, _, _, _) = match self {
            Stage::Zeta => (&[(MapKind::Texture, 3)], MapKind::Texture, 3, ColorSpace::Srgb, 8),
            Stage::Delta => (
                &[(MapKind::Texture, 3), (MapKind::Depth, 1)],
                MapKind::DiffuseAlbedo,
                3,
                ColorSpace::Srgb,
                1,
            ),
            Stage::Psi => (
                &[(MapKind::DiffuseAlbedo, 3)],
                MapKind::SpecularAlbedo,
                1,
                ColorSpace::Linear,
                1,
            ),
            Stage::Rho => (
                &[(MapKind::Gray, 1), (MapKind::NormalsTangent, 3)],
                MapKind::NormalsSpecular,
                3,
                ColorSpace::SignedUnit,
                1,
            ),
            Stage::Sigma => (
                &[(MapKind::Gray, 1), (MapKind::NormalsObject, 3)],
                MapKind::NormalsDiffuse,
                3,
                ColorSpace::SignedUnit,
                1,
            ),
        };
        Contract {
            name: self.as_str().to_string(),
            input: inputs.iter().flat_map(|&(k, c)| k.channel_names(c)).collect(),
            output_kind: kind,
            output_channels: channels,
            output_colorspace: cs,
            scale,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// What an operator consumes and produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contract {
    pub name: String,
    pub input: Vec<String>,
    pub output_kind: MapKind,
    pub output_channels: usize,
    pub output_colorspace: ColorSpace,
    /// Output size over input size.
    pub scale: usize,
}

impl Contract {
    pub fn output_layout(&self) -> Vec<String> {
        self.output_kind.channel_names(self.output_channels)
    }

    pub fn check_input(&self, input: &MapStack) -> Result<()> {
        if input.layout() != self.input.as_slice() {
            return Err(OperatorError::Layout {
                name: self.name.clone(),
                expected: self.input.clone(),
                got: input.layout().to_vec(),
            });
        }
        Ok(())
    }
}

pub trait TranslationOperator: Send + Sync {
    fn contract(&self) -> &Contract;

    fn backend(&self) -> &'static str;

    /// Same input, same output bytes.
    fn deterministic(&self) -> bool {
        true
    }

    /// Runs once on the full map instead of per patch.
    fn whole_image(&self) -> bool {
        false
    }

    /// One patch (or the whole map when [`whole_image`](Self::whole_image)).
    fn apply(&self, input: &MapStack) -> Result<RasterMap>;
}

/// Applies `op` whole-image or through the patch tiler, per its preference.
pub fn run_operator(op: &dyn TranslationOperator, input: &MapStack, tiling: &Tiling) -> Result<RasterMap> {
    op.contract().check_input(input)?;
    if op.whole_image() {
        return op.apply(input);
    }
    Ok(apply_tiled(input, tiling, op.contract().scale, |patch, _| {
        op.apply(&patch)
    })?)
}

/// Constants of the reference backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceParams {
    /// Specular albedo of smooth skin.
    pub s0: f64,
    pub kappa: f64,
    /// Blur radius of the specular-albedo high-pass, texels.
    pub sigma_b: f64,
    /// High-pass magnitude that maps to full occlusion.
    pub highpass_ref: f64,
    pub beta: f64,
    /// Light smoothing of the gray map before specular-normal gradients.
    pub sigma_rho: f64,
    pub sigma_d: f64,
    pub gamma: f64,
    /// Irradiance below which de-lighting falls back to the nearest texel.
    pub epsilon: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        ReferenceParams {
            s0: 0.3,
            kappa: 1.0,
            sigma_b: 4.0,
            highpass_ref: 0.1,
            beta: 0.8,
            sigma_rho: 1.0,
            sigma_d: 6.0,
            gamma: 0.2,
            epsilon: 0.02,
        }
    }
}

/// Output raster for `contract` with normals projected back to unit length.
pub(crate) fn finish_output(
    contract: &Contract,
    width: usize,
    height: usize,
    mut data: Vec<f32>,
    mask: Option<Vec<bool>>,
) -> Result<RasterMap> {
    if contract.output_kind.is_normals() {
        for (i, n) in data.chunks_exact_mut(3).enumerate() {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let len = n.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            // already-unit texels pass through bit-exact
            if len > 0.0 && (len - 1.0).abs() > 1e-6 {
                n.iter_mut()
                    .for_each(|v| *v = ((*v as f64 / len) as f32).clamp(-1.0, 1.0));
            }
        }
    }
    RasterMap::with_mask(
        width,
        height,
        contract.output_channels,
        data,
        contract.output_colorspace,
        contract.output_kind,
        mask,
    )
    .map_err(OperatorError::Contract)
}
