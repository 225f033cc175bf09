//! Physically based shading: point lights plus an image-based environment,
//! a Lambertian diffuse term on `N_D` and a GGX specular term on `N_S`.
//!
//! All radiometry is linear. Every term is linear in the rig intensities,
//! so scaling a rig scales renders and bakes by the same factor.

mod bake;
pub mod brdf;
mod render;

pub use bake::{bake_texture, compose_bake, irradiance_components, IrradianceComponents};
pub use brdf::{f_spec, ggx_d, smith_g1, BrdfParams};
pub use render::{render, Camera, ImageBuffer, NormalSpace, ReflectanceSet};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshError, TangentFrame, Vec3};
use crate::raster::{ColorSpace, RasterError, RasterMap};
use crate::rng::{stream_rng, Purpose};

#[derive(Debug, Error)]
pub enum ShadingError {
    #[error("{which} normal has length {norm}")]
    NonUnitNormal { which: &'static str, norm: f64 },
    #[error("environment map must be 3-channel linear radiance, got {channels} channels tagged {colorspace}")]
    Environment { channels: usize, colorspace: ColorSpace },
    #[error("point light {0} has a negative or non-finite intensity")]
    Intensity(usize),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("reflectance set: {0}")]
    Reflectance(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = ShadingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLight {
    pub position: Vec3,
    /// Radiant intensity per channel.
    pub intensity: [f64; 3],
}

/// Environment, point lights, and the positional jitter applied per bake.
#[derive(Debug, Clone, PartialEq)]
pub struct LightingRig {
    /// Lat-long linear radiance; a 1×1 map is a uniform environment.
    pub environment: Option<RasterMap>,
    pub point_lights: Vec<PointLight>,
    /// Standard deviation of per-axis light displacement, model units.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl LightingRig {
    pub fn dark() -> Self {
        LightingRig {
            environment: None,
            point_lights: Vec::new(),
            jitter_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(env) = &self.environment {
            if env.channels() != 3 || !matches!(env.colorspace(), ColorSpace::Linear | ColorSpace::Raw) {
                return Err(ShadingError::Environment {
                    channels: env.channels(),
                    colorspace: env.colorspace(),
                });
            }
        }
        for (i, l) in self.point_lights.iter().enumerate() {
            if l.intensity.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ShadingError::Intensity(i));
            }
        }
        Ok(())
    }

    /// Same rig with every intensity and environment radiance times `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let environment = match &self.environment {
            Some(env) => {
                let data = env.data().iter().map(|v| (*v as f64 * k) as f32).collect();
                // scaled radiance may exceed 1, so the copy is tagged raw
                Some(RasterMap::new(
                    env.width(),
                    env.height(),
                    3,
                    data,
                    ColorSpace::Raw,
                    env.kind(),
                )?)
            }
            None => None,
        };
        Ok(LightingRig {
            environment,
            point_lights: self
                .point_lights
                .iter()
                .map(|l| PointLight {
                    position: l.position,
                    intensity: l.intensity.map(|v| v * k),
                })
                .collect(),
            ..self.clone()
        })
    }

    /// Light positions displaced once by `N(0, jitter_sigma)` per axis.
    pub fn jittered_lights(&self) -> Vec<PointLight> {
        if self.jitter_sigma <= 0.0 {
            return self.point_lights.clone();
        }
        let normal = Normal::new(0.0, self.jitter_sigma).expect("finite sigma");
        let mut rng = stream_rng(self.seed, Purpose::LightJitter, 0);
        self.point_lights
            .iter()
            .map(|l| {
                let d = Vec3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
                PointLight {
                    position: l.position + d,
                    intensity: l.intensity,
                }
            })
            .collect()
    }
}

/// Sampling and visibility knobs shared by shading, baking and rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadingParams {
    pub brdf: BrdfParams,
    /// Environment samples per shading point, rounded to a square.
    pub env_samples: usize,
    pub shadows: bool,
    pub env_visibility: bool,
    /// Constant specular albedo used while baking.
    pub bake_specular_albedo: f64,
    /// Unit direction toward the viewer used while baking.
    pub bake_view: Vec3,
}

impl Default for ShadingParams {
    fn default() -> Self {
        ShadingParams {
            brdf: BrdfParams::default(),
            env_samples: 1024,
            shadows: true,
            env_visibility: false,
            bake_specular_albedo: 0.25,
            bake_view: Vec3::z(),
        }
    }
}

/// Bilinear lookup into a lat-long map: +Y is the top row, +Z the center
/// column, U wraps.
#[derive(Debug, Clone)]
pub(crate) struct EnvLookup<'a> {
    map: &'a RasterMap,
}

impl<'a> EnvLookup<'a> {
    pub(crate) fn new(map: &'a RasterMap) -> Self {
        EnvLookup { map }
    }

    pub(crate) fn radiance(&self, d: &Vec3) -> [f64; 3] {
        let (w, h) = self.map.dims();
        if w * h == 1 {
            let t = self.map.texel(0);
            return [t[0] as f64, t[1] as f64, t[2] as f64];
        }
        let phi = d.x.atan2(d.z);
        let theta = d.y.clamp(-1.0, 1.0).acos();
        let fx = (0.5 + phi / (2.0 * PI)) * w as f64 - 0.5;
        let fy = (theta / PI * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = fx.floor();
        let y0 = fy.floor() as usize;
        let tx = fx - x0;
        let ty = fy - y0 as f64;
        let wrap = |x: f64| x.rem_euclid(w as f64) as usize;
        let (xa, xb) = (wrap(x0), wrap(x0 + 1.0));
        let yb = (y0 + 1).min(h - 1);
        let mut out = [0.0; 3];
        for (x, y, wt) in [
            (xa, y0, (1.0 - tx) * (1.0 - ty)),
            (xb, y0, tx * (1.0 - ty)),
            (xa, yb, (1.0 - tx) * ty),
            (xb, yb, tx * ty),
        ] {
            let t = self.map.at(x, y);
            for c in 0..3 {
                out[c] += wt * t[c] as f64;
            }
        }
        out
    }
}

/// One shading query. Normals are unit and albedos linear.
#[derive(Debug, Clone, Copy)]
pub struct ShadePoint {
    pub position: Vec3,
    /// Unit direction from the point toward the viewer.
    pub view: Vec3,
    pub n_diffuse: Vec3,
    pub n_specular: Vec3,
    pub albedo_diffuse: [f64; 3],
    pub albedo_specular: [f64; 3],
}

/// Per-point shading split into the part scaled by `A_D` and the part
/// scaled by `A_S`: `L = A_D·irradiance + A_S·specular`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShadeTerms {
    /// `Σ V·(I/r²)·max(0, N_D·l)/π` plus the environment part.
    pub irradiance: [f64; 3],
    /// Specular radiance for unit specular albedo.
    pub specular: [f64; 3],
    /// A lit-side point light was blocked.
    pub shadowed: bool,
}

/// Returns `true` when the segment between the two points is unblocked.
pub type Visibility<'a> = dyn Fn(&Vec3, &Vec3) -> bool + Sync + 'a;

pub(crate) fn check_unit(which: &'static str, n: &Vec3) -> Result<()> {
    let norm = n.norm();
    if (norm - 1.0).abs() > crate::raster::UNIT_NORMAL_TOLERANCE as f64 {
        return Err(ShadingError::NonUnitNormal { which, norm });
    }
    Ok(())
}

/// Cosine-weighted stratified directions around `n`, `s × s` of them.
fn for_each_cosine_sample(n: &Vec3, s: usize, rng: &mut impl Rng, mut f: impl FnMut(&Vec3)) {
    let frame = TangentFrame::orthonormalize(Vec3::x(), *n);
    for i in 0..s {
        for j in 0..s {
            let u1 = (i as f64 + rng.random::<f64>()) / s as f64;
            let u2 = (j as f64 + rng.random::<f64>()) / s as f64;
            let r = u1.sqrt();
            let phi = 2.0 * PI * u2;
            let local = Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt());
            f(&frame.to_world(&local));
        }
    }
}

pub(crate) fn strata(env_samples: usize) -> usize {
    ((env_samples as f64).sqrt().round() as usize).max(1)
}

/// Shading terms at one point. `rng` drives the environment estimator;
/// `visible` answers point-light shadow and optional environment rays.
pub fn shade_terms(
    p: &ShadePoint,
    lights: &[PointLight],
    environment: Option<&RasterMap>,
    params: &ShadingParams,
    visible: &Visibility<'_>,
    rng: &mut impl Rng,
) -> ShadeTerms {
    let alpha = params.brdf.alpha;
    let mut t = ShadeTerms::default();
    for light in lights {
        let d = light.position - p.position;
        let r2 = d.norm_squared();
        if r2 == 0.0 {
            continue;
        }
        let l = d / r2.sqrt();
        let cd = p.n_diffuse.dot(&l).max(0.0);
        let cs = p.n_specular.dot(&l).max(0.0);
        if cd == 0.0 && cs == 0.0 {
            continue;
        }
        if params.shadows && !visible(&p.position, &light.position) {
            t.shadowed = true;
            continue;
        }
        let spec = f_spec(&p.n_specular, &l, &p.view, alpha) * cs;
        for c in 0..3 {
            let e = light.intensity[c] / r2;
            t.irradiance[c] += e * cd * brdf::LAMBERT;
            t.specular[c] += e * spec;
        }
    }
    if let Some(env) = environment {
        let lookup = EnvLookup::new(env);
        let s = strata(params.env_samples);
        let inv = 1.0 / (s * s) as f64;
        let env_visible = |d: &Vec3| !params.env_visibility || visible(&p.position, &(p.position + d * 1e4));
        let shared = p.n_diffuse == p.n_specular;
        // cosine-weighted pdf cancels the cosine and 1/π of the diffuse term
        for_each_cosine_sample(&p.n_diffuse, s, rng, |d| {
            if !env_visible(d) {
                return;
            }
            let l = lookup.radiance(d);
            let spec = if shared {
                PI * f_spec(&p.n_specular, d, &p.view, alpha)
            } else {
                0.0
            };
            for c in 0..3 {
                t.irradiance[c] += l[c] * inv;
                t.specular[c] += l[c] * spec * inv;
            }
        });
        if !shared {
            for_each_cosine_sample(&p.n_specular, s, rng, |d| {
                if !env_visible(d) {
                    return;
                }
                let l = lookup.radiance(d);
                let spec = PI * f_spec(&p.n_specular, d, &p.view, alpha);
                for c in 0..3 {
                    t.specular[c] += l[c] * spec * inv;
                }
            });
        }
    }
    t
}

/// Outgoing linear radiance at one point.
pub fn shade(
    p: &ShadePoint,
    lights: &[PointLight],
    environment: Option<&RasterMap>,
    params: &ShadingParams,
    visible: &Visibility<'_>,
    rng: &mut impl Rng,
) -> Result<[f64; 3]> {
    check_unit("diffuse", &p.n_diffuse)?;
    check_unit("specular", &p.n_specular)?;
    let t = shade_terms(p, lights, environment, params, visible, rng);
    Ok(std::array::from_fn(|c| {
        p.albedo_diffuse[c] * t.irradiance[c] + p.albedo_specular[c] * t.specular[c]
    }))
}

/// Hemisphere quadrature of `f_spec·cos` on an `n_theta × n_phi` midpoint
/// grid around `n = +Z`, for a view at polar angle `view_theta`.
pub fn lobe_albedo(alpha: f64, view_theta: f64, n_theta: usize, n_phi: usize) -> f64 {
    let n = Vec3::z();
    let v = Vec3::new(view_theta.sin(), 0.0, view_theta.cos());
    let dt = PI / 2.0 / n_theta as f64;
    let dp = 2.0 * PI / n_phi as f64;
    let mut sum = 0.0;
    for i in 0..n_theta {
        let th = (i as f64 + 0.5) * dt;
        for j in 0..n_phi {
            let ph = (j as f64 + 0.5) * dp;
            let l = Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            sum += f_spec(&n, &l, &v, alpha) * th.cos() * th.sin() * dt * dp;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    fn point(n: Vec3, ad: f64, a_s: f64) -> ShadePoint {
        ShadePoint {
            position: Vec3::zeros(),
            view: n,
            n_diffuse: n,
            n_specular: n,
            albedo_diffuse: [ad; 3],
            albedo_specular: [a_s; 3],
        }
    }

    fn always(_: &Vec3, _: &Vec3) -> bool {
        true
    }

    #[test]
    fn unit_light_on_normal_gives_inverse_pi() {
        let lights = [PointLight {
            position: Vec3::z(),
            intensity: [1.0; 3],
        }];
        let mut rng = stream_rng(0, Purpose::Render, 0);
        let l = shade(
            &point(Vec3::z(), 1.0, 0.0),
            &lights,
            None,
            &ShadingParams::default(),
            &always,
            &mut rng,
        )
        .unwrap();
        for c in l {
            assert!((c - 1.0 / PI).abs() < 1e-12);
        }
    }

    #[test]
    fn black_material_is_black() {
        let rig = assets::studio_rig(3);
        let mut rng = stream_rng(0, Purpose::Render, 0);
        let l = shade(
            &point(Vec3::z(), 0.0, 0.0),
            &rig.point_lights,
            rig.environment.as_ref(),
            &ShadingParams::default(),
            &always,
            &mut rng,
        )
        .unwrap();
        assert_eq!(l, [0.0; 3]);
    }

    #[test]
    fn white_furnace() {
        let env = assets::uniform_environment(1.0);
        let params = ShadingParams {
            env_samples: 4096,
            ..Default::default()
        };
        let n = Vec3::new(0.3, -0.4, 0.866).normalize();
        let mut rng = stream_rng(1, Purpose::Render, 0);
        let l = shade(&point(n, 1.0, 0.0), &[], Some(&env), &params, &always, &mut rng).unwrap();
        for c in l {
            assert!((c - 1.0).abs() <= 0.02);
        }
    }

    #[test]
    fn non_unit_normal_rejected() {
        let mut rng = stream_rng(0, Purpose::Render, 0);
        let p = point(Vec3::new(0.0, 0.0, 1.1), 1.0, 0.0);
        assert!(matches!(
            shade(&p, &[], None, &ShadingParams::default(), &always, &mut rng),
            Err(ShadingError::NonUnitNormal { .. })
        ));
    }

    #[test]
    fn environment_lookup_orientation() {
        let env = assets::sky_environment(16, 8, 1.0, [1.0; 3]);
        let look = EnvLookup::new(&env);
        assert!(look.radiance(&Vec3::y())[0] > look.radiance(&-Vec3::y())[0]);
    }

    #[test]
    fn jitter_is_seeded() {
        let mut rig = assets::studio_rig(5);
        rig.jitter_sigma = 0.1;
        assert_eq!(rig.jittered_lights(), rig.jittered_lights());
        assert_ne!(rig.jittered_lights(), rig.point_lights);
        let mut other = rig.clone();
        other.seed = 6;
        assert_ne!(rig.jittered_lights(), other.jittered_lights());
    }
}
