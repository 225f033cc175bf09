//! Pipeline configuration: JSON, unknown keys rejected, paths relative to
//! the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::operators::{ReferenceParams, Stage};
use crate::patch::Tiling;
use crate::raster::{load_raster, ColorSpace, MapKind};
use crate::shading::{Camera, LightingRig, PointLight, ShadingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 144×96 → 1152×768, patch 384, stride 192.
    #[default]
    Desk,
    /// 576×384 → 4608×3072, patch 1536, stride 768.
    Full,
}

impl Profile {
    pub fn input_resolution(self) -> (usize, usize) {
        match self {
            Profile::Desk => (144, 96),
            Profile::Full => (576, 384),
        }
    }

    pub fn output_resolution(self) -> (usize, usize) {
        let (w, h) = self.input_resolution();
        (w * 8, h * 8)
    }

    pub fn tiling(self) -> Tiling {
        let patch = match self {
            Profile::Desk => 384,
            Profile::Full => 1536,
        };
        Tiling {
            patch,
            stride: Some(patch / 2),
            blend: None,
        }
    }

    pub fn shading(self) -> ShadingParams {
        ShadingParams {
            env_samples: match self {
                Profile::Desk => 64,
                Profile::Full => 32,
            },
            ..Default::default()
        }
    }

    pub fn camera(self) -> Camera {
        match self {
            Profile::Desk => Camera::frontal(4.0, 256, 256),
            Profile::Full => Camera::frontal(4.0, 1024, 1024),
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(format!("unknown profile {s:?} (desk or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    /// Lat-long environment (float raster or PNG); PNG is decoded from sRGB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<PathBuf>,
    #[serde(default)]
    pub lights: Vec<PointLight>,
    #[serde(default)]
    pub jitter_sigma: f64,
    /// Defaults to the pipeline seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RigConfig {
    pub fn from_rig(rig: &LightingRig, environment: Option<PathBuf>) -> Self {
        RigConfig {
            environment,
            lights: rig.point_lights.clone(),
            jitter_sigma: rig.jitter_sigma,
            seed: Some(rig.seed),
        }
    }

    pub fn load(&self, base: &Path, default_seed: u64) -> Result<LightingRig, PipelineError> {
        let environment = match &self.environment {
            Some(p) => {
                let path = resolve(base, p);
                let env = load_raster(&path, MapKind::Generic).map_err(|e| PipelineError::input(&path, e))?;
                let env = match env.colorspace() {
                    ColorSpace::Srgb => {
                        crate::color::srgb_to_linear(&env).map_err(|e| PipelineError::input(&path, e))?
                    }
                    _ => env,
                };
                Some(env)
            }
            None => None,
        };
        let rig = LightingRig {
            environment,
            point_lights: self.lights.clone(),
            jitter_sigma: self.jitter_sigma,
            seed: self.seed.unwrap_or(default_seed),
        };
        rig.validate().map_err(|e| PipelineError::Config(format!("rig: {e}")))?;
        Ok(rig)
    }
}

/// Backend of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    // braced so that unknown keys are rejected
    Reference {},
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default)]
        whole_image: bool,
    },
    /// ζ only: the texture is already at output resolution.
    Passthrough {},
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Reference {}
    }
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorsConfig {
    pub zeta: BackendConfig,
    pub delta: BackendConfig,
    pub psi: BackendConfig,
    pub rho: BackendConfig,
    pub sigma: BackendConfig,
}

impl OperatorsConfig {
    pub fn get(&self, stage: Stage) -> &BackendConfig {
        match stage {
            Stage::Zeta => &self.zeta,
            Stage::Delta => &self.delta,
            Stage::Psi => &self.psi,
            Stage::Rho => &self.rho,
            Stage::Sigma => &self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub input: (usize, usize),
    pub output: (usize, usize),
}

/// Ground-truth maps compared in the evaluation stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffuse_albedo: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specular_albedo: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normals_specular: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normals_diffuse: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: PathBuf,
    /// Low-resolution texture `T`.
    pub texture: PathBuf,
    /// Texture already at output resolution, used by a passthrough ζ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture_hr: Option<PathBuf>,
    /// Lighting the texture was captured under (needed by the reference δ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<RigConfig>,
    /// Relighting rigs by name; empty renders under the capture rig.
    #[serde(default)]
    pub render_rigs: IndexMap<String, RigConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub operators: OperatorsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiling: Option<Tiling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default)]
    pub profile: Profile,
    /// Accept any input size for ζ (output is always 8× the input).
    #[serde(default)]
    pub any_size: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Model units per displacement unit.
    pub emboss_scale: f64,
    #[serde(default)]
    pub subdivision_levels: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shading: Option<ShadingParams>,
    #[serde(default)]
    pub params: ReferenceParams,
    #[serde(default)]
    pub truth: TruthConfig,
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn input_resolution(&self) -> (usize, usize) {
        self.resolution.map_or(self.profile.input_resolution(), |r| r.input)
    }

    pub fn output_resolution(&self) -> (usize, usize) {
        self.resolution.map_or(self.profile.output_resolution(), |r| r.output)
    }

    pub fn tiling(&self) -> Tiling {
        self.tiling.unwrap_or(self.profile.tiling())
    }

    pub fn shading(&self) -> ShadingParams {
        self.shading.unwrap_or(self.profile.shading())
    }

    pub fn camera(&self) -> Camera {
        self.camera.unwrap_or(self.profile.camera())
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self, base: &Path) -> Result<(), PipelineError> {
        let must_exist = |p: &Path, what: &str| {
            let path = resolve(base, p);
            if path.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!(
                    "{what} {} does not exist",
                    path.display()
                )))
            }
        };
        must_exist(&self.mesh, "mesh")?;
        must_exist(&self.texture, "texture")?;
        if let Some(p) = &self.texture_hr {
            must_exist(p, "texture_hr")?;
        }
        for rig in self.rig.iter().chain(self.render_rigs.values()) {
            if let Some(p) = &rig.environment {
                must_exist(p, "environment")?;
            }
        }
        for p in [
            &self.truth.diffuse_albedo,
            &self.truth.specular_albedo,
            &self.truth.normals_specular,
            &self.truth.normals_diffuse,
        ]
        .into_iter()
        .flatten()
        {
            must_exist(p, "truth map")?;
        }
        for stage in Stage::ALL {
            match self.operators.get(stage) {
                BackendConfig::Passthrough {} if stage != Stage::Zeta => {
                    return Err(PipelineError::Config(format!(
                        "{stage}: passthrough is only valid for zeta"
                    )));
                }
                BackendConfig::External { command, timeout_s, .. } => {
                    if command.is_empty() {
                        return Err(PipelineError::Config(format!("{stage}: external command is empty")));
                    }
                    if !(*timeout_s > 0.0 && timeout_s.is_finite()) {
                        return Err(PipelineError::Config(format!("{stage}: timeout_s must be positive")));
                    }
                }
                _ => {}
            }
        }
        if matches!(self.operators.delta, BackendConfig::Reference {}) && self.rig.is_none() {
            return Err(PipelineError::Config("the reference delta backend needs `rig`".into()));
        }
        if !self.emboss_scale.is_finite() {
            return Err(PipelineError::Config("emboss_scale must be finite".into()));
        }
        let t = self.tiling();
        if t.patch == 0 || t.stride() == 0 || t.stride() > t.patch {
            return Err(PipelineError::Config(format!(
                "tiling: patch {} stride {}",
                t.patch,
                t.stride()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"{"mesh": "m.obj", "texture": "t.png", "output_dir": "out", "seed": 7, "emboss_scale": 0.01}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = PipelineConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.output_resolution(), (1152, 768));
        assert_eq!(c.tiling().stride(), 192);
        assert_eq!(c.operators.zeta, BackendConfig::Reference {});
    }

    #[test]
    fn unknown_keys_and_missing_seed_are_rejected() {
        let extra = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"sead\": 1");
        assert!(PipelineConfig::from_json(&extra).is_err());
        let no_seed = MINIMAL.replace("\"seed\": 7, ", "");
        assert!(PipelineConfig::from_json(&no_seed).is_err());
        let bad_op = MINIMAL.replace(
            "\"seed\"",
            "\"operators\": {\"psi\": {\"backend\": \"reference\", \"x\": 1}}, \"seed\"",
        );
        assert!(PipelineConfig::from_json(&bad_op).is_err());
    }

    #[test]
    fn external_backend_round_trips() {
        let text = MINIMAL.replace(
            "\"seed\"",
            "\"operators\": {\"rho\": {\"backend\": \"external\", \"command\": [\"net\", \"--fp16\"]}}, \"seed\"",
        );
        let c = PipelineConfig::from_json(&text).unwrap();
        let BackendConfig::External {
            command,
            timeout_s,
            whole_image,
        } = &c.operators.rho
        else {
            panic!()
        };
        assert_eq!((command.len(), *timeout_s, *whole_image), (2, 60.0, false));
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
