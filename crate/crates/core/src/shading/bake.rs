//! Texture-space illumination baking and its exact decomposition.

use rayon::prelude::*;

use super::{shade_terms, LightingRig, Result, ShadePoint, ShadingParams};
use crate::color::{srgb_decode, srgb_encode};
use crate::mesh::{shape_normals, Bvh, Mesh, UvCoverage, Vec3};
use crate::raster::{ColorSpace, MapKind, RasterError, RasterMap};
use crate::rng::{stream_rng, Purpose};

/// Offset applied along the geometric normal before casting shadow rays.
pub(crate) const RAY_OFFSET: f64 = 1e-5;

/// The two addends of a bake: `bake = srgb(A_D·E + S)` in linear light.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceComponents {
    /// Diffuse irradiance `E` (already divided by π), 3 channels, raw.
    pub irradiance: RasterMap,
    /// Specular addend `S` including the bake's constant specular albedo.
    pub specular: RasterMap,
    /// Texels where at least one lit-side point light was blocked.
    pub shadowed: Vec<bool>,
}

impl IrradianceComponents {
    pub fn dims(&self) -> (usize, usize) {
        self.irradiance.dims()
    }
}

/// Per-texel surface position and interpolated shape normal.
pub(crate) struct TexelGeometry {
    pub(crate) coverage: UvCoverage,
    pub(crate) positions: Vec<f64>,
    pub(crate) normals: Vec<f64>,
}

impl TexelGeometry {
    pub(crate) fn new(mesh: &Mesh, resolution: (usize, usize)) -> Result<Self> {
        let coverage = UvCoverage::new(mesh, resolution)?;
        let pos: Vec<f64> = mesh.vertices().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let nrm: Vec<f64> = shape_normals(mesh)?.iter().flat_map(|n| [n.x, n.y, n.z]).collect();
        let n = resolution.0 * resolution.1;
        let mut positions = vec![0.0; n * 3];
        let mut normals = vec![0.0; n * 3];
        positions
            .par_chunks_mut(3)
            .zip(normals.par_chunks_mut(3))
            .enumerate()
            .for_each(|(i, (p, q))| {
                if coverage.interpolate(mesh, &pos, 3, i, p) {
                    coverage.interpolate(mesh, &nrm, 3, i, q);
                    let v = Vec3::new(q[0], q[1], q[2]).normalize();
                    q.copy_from_slice(v.as_slice());
                }
            });
        Ok(TexelGeometry {
            coverage,
            positions,
            normals,
        })
    }

    fn position(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    fn normal(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.normals[3 * i..3 * i + 3])
    }
}

/// Decomposed illumination at each texel for a bake under `rig`.
///
/// Lights are jittered once from `rig.seed`; environment samples use a
/// per-texel stream of the same seed.
pub fn irradiance_components(
    mesh: &Mesh,
    rig: &LightingRig,
    params: &ShadingParams,
    resolution: (usize, usize),
) -> Result<IrradianceComponents> {
    rig.validate()?;
    let geom = TexelGeometry::new(mesh, resolution)?;
    let bvh = Bvh::build(mesh);
    let lights = rig.jittered_lights();
    let a_s = params.bake_specular_albedo;
    let n = resolution.0 * resolution.1;
    let terms: Vec<([f32; 3], [f32; 3], bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if geom.coverage.sample(i).is_none() {
                return ([0.0; 3], [0.0; 3], false);
            }
            let normal = geom.normal(i);
            let p = ShadePoint {
                position: geom.position(i),
                view: params.bake_view,
                n_diffuse: normal,
                n_specular: normal,
                albedo_diffuse: [1.0; 3],
                albedo_specular: [a_s; 3],
            };
            let visible = |a: &Vec3, b: &Vec3| !bvh.occluded(&(a + normal * RAY_OFFSET), b, RAY_OFFSET);
            let mut rng = stream_rng(rig.seed, Purpose::Environment, i as u64);
            let t = shade_terms(&p, &lights, rig.environment.as_ref(), params, &visible, &mut rng);
            (
                t.irradiance.map(|v| v as f32),
                t.specular.map(|v| (a_s * v) as f32),
                t.shadowed,
            )
        })
        .collect();
    let mask = geom.coverage.mask();
    let (w, h) = resolution;
    let mk =
        |data: Vec<f32>| RasterMap::with_mask(w, h, 3, data, ColorSpace::Raw, MapKind::Irradiance, Some(mask.clone()));
    Ok(IrradianceComponents {
        irradiance: mk(terms.iter().flat_map(|t| t.0).collect())?,
        specular: mk(terms.iter().flat_map(|t| t.1).collect())?,
        shadowed: terms.iter().map(|t| t.2).collect(),
    })
}

/// `srgb(clamp(lin(A_D)·E + S))` per covered texel; uncovered texels are
/// zero and invalid.
pub fn compose_bake(albedo: &RasterMap, components: &IrradianceComponents) -> Result<RasterMap> {
    if albedo.colorspace() != ColorSpace::Srgb || albedo.channels() != 3 {
        return Err(RasterError::Colorspace {
            got: albedo.colorspace(),
            context: "baking expects a 3-channel sRGB albedo",
        }
        .into());
    }
    albedo.expect_dims(components.dims())?;
    let e = components.irradiance.data();
    let s = components.specular.data();
    let mask: Vec<bool> = (0..albedo.texels())
        .map(|i| albedo.is_valid(i) && components.irradiance.is_valid(i))
        .collect();
    let data: Vec<f32> = albedo
        .data()
        .par_iter()
        .enumerate()
        .map(|(k, &a)| {
            if !mask[k / 3] {
                return 0.0;
            }
            let lin = srgb_decode(a as f64) * e[k] as f64 + s[k] as f64;
            srgb_encode(lin.clamp(0.0, 1.0)) as f32
        })
        .collect();
    let (w, h) = albedo.dims();
    Ok(RasterMap::with_mask(
        w,
        h,
        3,
        data,
        ColorSpace::Srgb,
        MapKind::BakedTexture,
        Some(mask),
    )?)
}

/// Bakes the illumination of `rig` into the sRGB albedo's UV layout.
pub fn bake_texture(albedo: &RasterMap, mesh: &Mesh, rig: &LightingRig, params: &ShadingParams) -> Result<RasterMap> {
    let comps = irradiance_components(mesh, rig, params, albedo.dims())?;
    compose_bake(albedo, &comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::shading::PointLight;

    fn fast() -> ShadingParams {
        ShadingParams {
            env_samples: 16,
            ..Default::default()
        }
    }

    #[test]
    fn dark_rig_bakes_black() {
        let mesh = assets::dome_face(8, assets::FaceFeatures::face());
        let albedo = assets::skin_albedo(24, 16, 1);
        let mut rig = assets::studio_rig(1);
        rig = rig.scaled(0.0).unwrap();
        let b = bake_texture(&albedo, &mesh, &rig, &fast()).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        let c = irradiance_components(&mesh, &LightingRig::dark(), &fast(), (24, 16)).unwrap();
        assert!(c.irradiance.data().iter().chain(c.specular.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn unit_light_at_distance_two() {
        let mesh = assets::quad(0.0, [0.0, 0.0, 1.0, 1.0]);
        let rig = LightingRig {
            point_lights: vec![PointLight {
                position: Vec3::new(0.5, 0.5, 2.0),
                intensity: [1.0; 3],
            }],
            ..LightingRig::dark()
        };
        let c = irradiance_components(&mesh, &rig, &fast(), (3, 3)).unwrap();
        let e = c.irradiance.at(1, 1)[0] as f64;
        let expected = 1.0 / (4.0 * std::f64::consts::PI);
        assert!((e - expected).abs() < 1e-6, "{e} vs {expected}");
    }

    #[test]
    fn seeded_bakes_repeat_bit_exactly() {
        let mesh = assets::dome_face(10, assets::FaceFeatures::face());
        let albedo = assets::skin_albedo(32, 24, 2);
        let mut rig = assets::studio_rig(9);
        rig.jitter_sigma = 0.05;
        let a = bake_texture(&albedo, &mesh, &rig, &fast()).unwrap();
        let b = bake_texture(&albedo, &mesh, &rig, &fast()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn furnace_bake_reproduces_albedo() {
        let mesh = assets::dome_face(12, assets::FaceFeatures::default());
        let albedo = assets::skin_albedo(32, 24, 4);
        let rig = LightingRig {
            environment: Some(assets::uniform_environment(1.0)),
            ..LightingRig::dark()
        };
        let params = ShadingParams {
            bake_specular_albedo: 0.0,
            ..fast()
        };
        let b = bake_texture(&albedo, &mesh, &rig, &params).unwrap();
        for (x, y) in b.data().iter().zip(albedo.data()) {
            assert!((x - y).abs() <= 0.02 * y.max(1e-3));
        }
    }

    #[test]
    fn composition_matches_components() {
        let mesh = assets::dome_face(8, assets::FaceFeatures::face());
        let albedo = assets::skin_albedo(24, 16, 5);
        let rig = assets::studio_rig(2);
        let c = irradiance_components(&mesh, &rig, &fast(), (24, 16)).unwrap();
        let b = bake_texture(&albedo, &mesh, &rig, &fast()).unwrap();
        for i in 0..b.texels() {
            for k in 0..3 {
                let lin = srgb_decode(albedo.texel(i)[k] as f64) * c.irradiance.texel(i)[k] as f64
                    + c.specular.texel(i)[k] as f64;
                let got = srgb_decode(b.texel(i)[k] as f64);
                assert!((got - lin.clamp(0.0, 1.0)).abs() <= 1e-6);
            }
        }
    }
}
