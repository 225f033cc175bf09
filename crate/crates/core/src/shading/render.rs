//! Ray-cast rendering of a mesh carrying a reflectance set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bake::RAY_OFFSET;
use super::{check_unit, shade_terms, LightingRig, Result, ShadePoint, ShadingError, ShadingParams};
use crate::color::srgb_decode;
use crate::mesh::{sample_bilinear_into, shape_normals, tangent_frames, Bvh, Mesh, TangentFrame, Vec3};
use crate::raster::{ColorSpace, MapKind, RasterMap};
use crate::rng::{stream_rng, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians, in `(0, π)`.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera on the +Z axis at `distance`, looking at the origin.
    pub fn frontal(distance: f64, width: usize, height: usize) -> Self {
        Camera {
            position: Vec3::new(0.0, 0.0, distance),
            look_at: Vec3::zeros(),
            up: Vec3::y(),
            vertical_fov: 0.6,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fwd = self.look_at - self.position;
        if fwd.norm() == 0.0 {
            return Err(ShadingError::Camera("position equals look_at".into()));
        }
        if fwd.normalize().cross(&self.up).norm() < 1e-9 {
            return Err(ShadingError::Camera("up is parallel to the view direction".into()));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(ShadingError::Camera(format!(
                "field of view {} outside (0, pi)",
                self.vertical_fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ShadingError::Camera("image size must be non-zero".into()));
        }
        Ok(())
    }

    /// Unit ray direction through the center of pixel `(x, y)`, row 0 on top.
    pub fn ray(&self, x: usize, y: usize) -> Vec3 {
        let fwd = (self.look_at - self.position).normalize();
        let right = fwd.cross(&self.up).normalize();
        let up = right.cross(&fwd);
        let half_h = (self.vertical_fov / 2.0).tan();
        let half_w = half_h * self.width as f64 / self.height as f64;
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * half_w;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * half_h;
        (fwd + right * sx + up * sy).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalSpace {
    Object,
    Tangent,
}

/// Everything needed to shade a subject; all maps share one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceSet {
    /// sRGB or linear, 3 channels.
    pub diffuse_albedo: RasterMap,
    /// Linear, 1 or 3 channels.
    pub specular_albedo: RasterMap,
    pub diffuse_normals: RasterMap,
    pub diffuse_space: NormalSpace,
    /// Tangent space.
    pub specular_normals: RasterMap,
    pub displacement: Option<RasterMap>,
}

impl ReflectanceSet {
    pub fn validate(&self) -> Result<()> {
        let dims = self.diffuse_albedo.dims();
        let bad = |m: &str| Err(ShadingError::Reflectance(m.into()));
        for m in [&self.specular_albedo, &self.diffuse_normals, &self.specular_normals]
            .into_iter()
            .chain(self.displacement.as_ref())
        {
            m.expect_dims(dims)?;
        }
        if self.diffuse_albedo.channels() != 3
            || !matches!(self.diffuse_albedo.colorspace(), ColorSpace::Srgb | ColorSpace::Linear)
        {
            return bad("diffuse albedo must be 3-channel sRGB or linear");
        }
        if !matches!(self.specular_albedo.channels(), 1 | 3) {
            return bad("specular albedo must have 1 or 3 channels");
        }
        if !self.diffuse_normals.kind().is_normals() || !self.specular_normals.kind().is_normals() {
            return bad("normal maps must carry a normals kind");
        }
        Ok(())
    }

    /// Flat reflectance: constant albedos, unperturbed tangent normals.
    pub fn uniform(width: usize, height: usize, diffuse_linear: [f32; 3], specular: f32) -> Result<Self> {
        let n = |kind| RasterMap::filled(width, height, &[0.0, 0.0, 1.0], ColorSpace::SignedUnit, kind);
        Ok(ReflectanceSet {
            diffuse_albedo: RasterMap::filled(
                width,
                height,
                &diffuse_linear,
                ColorSpace::Linear,
                MapKind::DiffuseAlbedo,
            )?,
            specular_albedo: RasterMap::filled(
                width,
                height,
                &[specular],
                ColorSpace::Linear,
                MapKind::SpecularAlbedo,
            )?,
            diffuse_normals: n(MapKind::NormalsDiffuse)?,
            diffuse_space: NormalSpace::Tangent,
            specular_normals: n(MapKind::NormalsSpecular)?,
            displacement: None,
        })
    }
}

/// Linear RGB render with a per-pixel coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
    /// Pixels whose first hit was a back face (camera inside the mesh).
    pub degenerate: usize,
}

impl ImageBuffer {
    pub fn to_raster(&self) -> Result<RasterMap> {
        Ok(RasterMap::with_mask(
            self.width,
            self.height,
            3,
            self.data.clone(),
            ColorSpace::Raw,
            MapKind::Generic,
            Some(self.mask.clone()),
        )?)
    }

    /// Clamped, sRGB-encoded copy for viewing.
    pub fn srgb_preview(&self) -> Result<RasterMap> {
        let data = self
            .data
            .iter()
            .map(|&v| crate::color::srgb_encode((v as f64).clamp(0.0, 1.0)) as f32)
            .collect();
        Ok(RasterMap::with_mask(
            self.width,
            self.height,
            3,
            data,
            ColorSpace::Srgb,
            MapKind::Generic,
            Some(self.mask.clone()),
        )?)
    }
}

fn sample3(map: &RasterMap, uv: [f64; 2]) -> Option<Vec3> {
    let mut v = [0.0; 3];
    sample_bilinear_into(map, uv, &mut v).then(|| Vec3::from(v))
}

/// Renders `mesh` under the nominal (unjittered) lights of `rig`.
pub fn render(
    mesh: &Mesh,
    refl: &ReflectanceSet,
    camera: &Camera,
    rig: &LightingRig,
    params: &ShadingParams,
) -> Result<ImageBuffer> {
    refl.validate()?;
    camera.validate()?;
    rig.validate()?;
    let bvh = Bvh::build(mesh);
    let normals = shape_normals(mesh)?;
    let frames = tangent_frames(mesh)?;
    let srgb_albedo = refl.diffuse_albedo.colorspace() == ColorSpace::Srgb;
    let (w, h) = (camera.width, camera.height);

    let pixels: Vec<([f32; 3], bool, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let dir = camera.ray(i % w, i / w);
            let Some(hit) = bvh.intersect(&camera.position, &dir, 0.0, f64::INFINITY) else {
                return ([0.0; 3], false, false);
            };
            if hit.backface {
                return ([0.0; 3], false, true);
            }
            let [a, b, c] = mesh.triangles()[hit.triangle].map(|v| v as usize);
            let [b1, b2] = hit.bary;
            let lerp3 = |va: Vec3, vb: Vec3, vc: Vec3| va + (vb - va) * b1 + (vc - va) * b2;
            let uvs = mesh.uvs();
            let uv = [0, 1].map(|k| uvs[a][k] + b1 * (uvs[b][k] - uvs[a][k]) + b2 * (uvs[c][k] - uvs[a][k]));
            let shape_n = lerp3(normals[a], normals[b], normals[c]).normalize();
            let tangent = lerp3(frames[a].tangent, frames[b].tangent, frames[c].tangent);
            let frame = TangentFrame::orthonormalize(tangent, shape_n);
            let position = camera.position + dir * hit.t;

            let decode = |m: &RasterMap, space: NormalSpace| -> Vec3 {
                match sample3(m, uv) {
                    Some(n) if n.norm() > 0.0 => {
                        let n = n.normalize();
                        match space {
                            NormalSpace::Tangent => frame.to_world(&n).normalize(),
                            NormalSpace::Object => n,
                        }
                    }
                    _ => shape_n,
                }
            };
            let n_diffuse = decode(&refl.diffuse_normals, refl.diffuse_space);
            let n_specular = decode(&refl.specular_normals, NormalSpace::Tangent);
            let mut ad = [0.0; 3];
            if sample_bilinear_into(&refl.diffuse_albedo, uv, &mut ad) && srgb_albedo {
                ad = ad.map(srgb_decode);
            }
            let mut s = [0.0; 3];
            let got = sample_bilinear_into(&refl.specular_albedo, uv, &mut s[..refl.specular_albedo.channels()]);
            let a_s = match (got, refl.specular_albedo.channels()) {
                (false, _) => [0.0; 3],
                (true, 1) => [s[0]; 3],
                (true, _) => s,
            };
            let p = ShadePoint {
                position,
                view: -dir,
                n_diffuse,
                n_specular,
                albedo_diffuse: ad,
                albedo_specular: a_s,
            };
            debug_assert!(check_unit("diffuse", &n_diffuse).is_ok());
            let visible = |from: &Vec3, to: &Vec3| !bvh.occluded(&(from + shape_n * RAY_OFFSET), to, RAY_OFFSET);
            let mut rng = stream_rng(rig.seed, Purpose::Render, i as u64);
            let t = shade_terms(
                &p,
                &rig.point_lights,
                rig.environment.as_ref(),
                params,
                &visible,
                &mut rng,
            );
            let rgb = std::array::from_fn(|k| (ad[k] * t.irradiance[k] + a_s[k] * t.specular[k]) as f32);
            (rgb, true, false)
        })
        .collect();

    Ok(ImageBuffer {
        width: w,
        height: h,
        data: pixels.iter().flat_map(|p| p.0).collect(),
        mask: pixels.iter().map(|p| p.1).collect(),
        degenerate: pixels.iter().filter(|p| p.2).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::shading::PointLight;

    fn params() -> ShadingParams {
        ShadingParams {
            env_samples: 16,
            ..Default::default()
        }
    }

    #[test]
    fn mesh_behind_camera_is_empty() {
        let mesh = assets::icosphere(2);
        let refl = ReflectanceSet::uniform(8, 8, [1.0; 3], 0.0).unwrap();
        let mut cam = Camera::frontal(4.0, 16, 12);
        cam.look_at = Vec3::new(0.0, 0.0, 8.0);
        let img = render(&mesh, &refl, &cam, &assets::studio_rig(0), &params()).unwrap();
        assert!(img.mask.iter().all(|m| !m));
    }

    #[test]
    fn camera_inside_flags_pixels() {
        let mesh = assets::icosphere(2);
        let refl = ReflectanceSet::uniform(8, 8, [1.0; 3], 0.0).unwrap();
        let cam = Camera::frontal(0.0, 8, 8);
        let cam = Camera {
            look_at: Vec3::new(0.0, 0.0, -1.0),
            ..cam
        };
        let img = render(&mesh, &refl, &cam, &assets::studio_rig(0), &params()).unwrap();
        assert_eq!(img.degenerate, 64);
    }

    #[test]
    fn doubling_lights_doubles_image() {
        let mesh = assets::dome_face(12, assets::FaceFeatures::face());
        let refl = ReflectanceSet::uniform(16, 16, [0.6, 0.5, 0.4], 0.3).unwrap();
        let cam = Camera::frontal(4.0, 24, 16);
        let rig = assets::studio_rig(4);
        let a = render(&mesh, &refl, &cam, &rig, &params()).unwrap();
        let b = render(&mesh, &refl, &cam, &rig.scaled(2.0).unwrap(), &params()).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() <= 1e-6 * y.abs().max(1e-6));
        }
    }

    #[test]
    fn lambert_sphere_profile() {
        let mesh = assets::uv_sphere(48, 96);
        let refl = ReflectanceSet::uniform(8, 8, [1.0; 3], 0.0).unwrap();
        let cam = Camera::frontal(5.0, 48, 48);
        let light = PointLight {
            position: Vec3::new(0.0, 0.0, 50.0),
            intensity: [2500.0; 3],
        };
        let rig = crate::shading::LightingRig {
            point_lights: vec![light],
            ..crate::shading::LightingRig::dark()
        };
        let img = render(&mesh, &refl, &cam, &rig, &params()).unwrap();
        let (mut se, mut n, mut peak) = (0.0, 0, 0.0f64);
        for i in 0..img.mask.len() {
            if !img.mask[i] {
                continue;
            }
            // analytic hit on the unit sphere
            let d = cam.ray(i % 48, i / 48);
            let o = cam.position;
            let bq = o.dot(&d);
            let disc = bq * bq - (o.norm_squared() - 1.0);
            if disc <= 0.0 {
                continue;
            }
            let p = o + d * (-bq - disc.sqrt());
            let l = light.position - p;
            let expect = 2500.0 / l.norm_squared() * p.normalize().dot(&l.normalize()).max(0.0) / std::f64::consts::PI;
            peak = peak.max(expect);
            se += (img.data[3 * i] as f64 - expect).powi(2);
            n += 1;
        }
        let rmse = (se / n as f64).sqrt();
        assert!(rmse <= 0.01 * peak, "rmse {rmse} peak {peak}");
    }
}
