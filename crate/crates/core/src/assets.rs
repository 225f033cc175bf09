//! Procedural test assets: template meshes, albedo textures, lighting rigs.
//!
//! These stand in for a fitted face (mesh + texture) at desk scale. The
//! face template is a grid over the full UV square lifted onto an
//! ellipsoidal dome, so its UV layout never overlaps and covers every
//! texel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, Vec3};
use crate::raster::{ColorSpace, MapKind, RasterMap};
use crate::shading::{LightingRig, PointLight};

/// Relief added on top of the base dome.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FaceFeatures {
    /// Height of a Gaussian nose bump.
    pub nose: f64,
    /// Height of two brow ridges.
    pub brows: f64,
}

impl FaceFeatures {
    pub fn face() -> Self {
        FaceFeatures {
            nose: 0.22,
            brows: 0.06,
        }
    }
}

/// Dome-shaped face template on an `n × n` quad grid, facing +Z.
pub fn dome_face(n: usize, features: FaceFeatures) -> Mesh {
    dome_face_grid(n, n, features)
}

pub fn dome_face_grid(nu: usize, nv: usize, features: FaceFeatures) -> Mesh {
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    let mut uvs = Vec::with_capacity(vertices.capacity());
    for j in 0..=nv {
        for i in 0..=nu {
            let u = i as f64 / nu as f64;
            let v = j as f64 / nv as f64;
            let x = 2.0 * u - 1.0;
            let y = 1.5 * v - 0.75;
            let r2 = (x * x + y * y) / (1.6 * 1.6);
            let mut z = 0.9 * (1.0 - r2).max(0.0).sqrt();
            let g = |cx: f64, cy: f64, sx: f64, sy: f64| {
                (-((x - cx).powi(2) / (2.0 * sx * sx) + (y - cy).powi(2) / (2.0 * sy * sy))).exp()
            };
            z += features.nose * g(0.0, -0.05, 0.12, 0.22);
            z += features.brows * (g(-0.35, 0.3, 0.2, 0.05) + g(0.35, 0.3, 0.2, 0.05));
            vertices.push(Vec3::new(x, y, z));
            uvs.push([u, v]);
        }
    }
    let idx = |i: usize, j: usize| (j * (nu + 1) + i) as u32;
    let mut triangles = Vec::with_capacity(nu * nv * 2);
    for j in 0..nv {
        for i in 0..nu {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::new(vertices, triangles, uvs, format!("dome-{nu}x{nv}")).expect("valid grid")
}

/// Flat quad at height `z` covering the UV rectangle `[u0, v0, u1, v1]`;
/// positions equal `(u, v, z)`.
pub fn quad(z: f64, rect: [f64; 4]) -> Mesh {
    let [u0, v0, u1, v1] = rect;
    let uvs = vec![[u0, v0], [u1, v0], [u1, v1], [u0, v1]];
    let vertices = uvs.iter().map(|p| Vec3::new(p[0], p[1], z)).collect();
    Mesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]], uvs, "quad").expect("valid quad")
}

/// Left UV half at Z = 0, right UV half at Z = 2.
pub fn two_planes() -> Mesh {
    let a = quad(0.0, [0.0, 0.0, 0.5, 1.0]);
    let b = quad(2.0, [0.5, 0.0, 1.0, 1.0]);
    let mut vertices = a.vertices().to_vec();
    vertices.extend_from_slice(b.vertices());
    let mut uvs = a.uvs().to_vec();
    uvs.extend_from_slice(b.uvs());
    let mut triangles = a.triangles().to_vec();
    triangles.extend(b.triangles().iter().map(|t| t.map(|i| i + 4)));
    Mesh::new(vertices, triangles, uvs, "two-planes").expect("valid planes")
}

fn spherical_uv(p: &Vec3) -> [f64; 2] {
    let u = 0.5 + p.x.atan2(p.z) / (2.0 * PI);
    let v = 0.5 + p.y.clamp(-1.0, 1.0).asin() / PI;
    [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]
}

/// Unit icosphere with `level` midpoint refinements, outward winding.
/// UVs are spherical and overlap along the seam.
pub fn icosphere(level: u32) -> Mesh {
    use std::collections::HashMap;
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize());
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let uvs = vertices.iter().map(spherical_uv).collect();
    Mesh::new(vertices, faces, uvs, format!("icosphere-{level}")).expect("valid icosphere")
}

const POLE_GAP: f64 = 1e-3;

/// Latitude–longitude unit sphere with a duplicated seam column; the UV
/// layout covers the full square without overlap. Each pole is a tiny open
/// ring of angular radius `POLE_GAP`.
pub fn uv_sphere(n_lat: usize, n_lon: usize) -> Mesh {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..=n_lat {
        for j in 0..=n_lon {
            let u = j as f64 / n_lon as f64;
            let v = i as f64 / n_lat as f64;
            // poles pulled in slightly so no triangle is degenerate
            let theta = POLE_GAP + (PI - 2.0 * POLE_GAP) * (1.0 - v);
            let phi = 2.0 * PI * u;
            vertices.push(Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()));
            uvs.push([u, v]);
        }
    }
    let idx = |i: usize, j: usize| (i * (n_lon + 1) + j) as u32;
    let mut triangles = Vec::new();
    for i in 0..n_lat {
        for j in 0..n_lon {
            let (a, b, c, d) = (idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::new(vertices, triangles, uvs, format!("uvsphere-{n_lat}x{n_lon}")).expect("valid sphere")
}

/// Smooth value noise in `[0, 1]` on a lattice of `cells` per unit.
struct ValueNoise {
    lattice: Vec<f64>,
    n: usize,
}

impl ValueNoise {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        ValueNoise {
            lattice: (0..(n + 1) * (n + 1)).map(|_| rng.random::<f64>()).collect(),
            n,
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let fx = u.clamp(0.0, 1.0) * self.n as f64;
        let fy = v.clamp(0.0, 1.0) * self.n as f64;
        let (x0, y0) = (
            (fx.floor() as usize).min(self.n - 1),
            (fy.floor() as usize).min(self.n - 1),
        );
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - x0 as f64), s(fy - y0 as f64));
        let l = |x: usize, y: usize| self.lattice[y * (self.n + 1) + x];
        let a = l(x0, y0) + tx * (l(x0 + 1, y0) - l(x0, y0));
        let b = l(x0, y0 + 1) + tx * (l(x0 + 1, y0 + 1) - l(x0, y0 + 1));
        a + ty * (b - a)
    }
}

/// Skin-like sRGB albedo: base tone, blotches, and dark pores.
pub fn skin_albedo(width: usize, height: usize, seed: u64) -> RasterMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blotch = ValueNoise::new(6, &mut rng);
    let fine = ValueNoise::new(40, &mut rng);
    let tone = [
        0.78 + 0.06 * rng.random::<f64>(),
        0.58,
        0.47 + 0.04 * rng.random::<f64>(),
    ];
    let pores: Vec<(f64, f64, f64)> = (0..(width * height / 300).max(8))
        .map(|_| {
            (
                rng.random::<f64>(),
                rng.random::<f64>(),
                0.6 + 0.8 * rng.random::<f64>(),
            )
        })
        .collect();
    let mut pore_map = vec![0.0f64; width * height];
    for &(pu, pv, r) in &pores {
        let cx = pu * width as f64;
        let cy = pv * height as f64;
        let rad = (r * 2.5).ceil() as i64;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let x = cx as i64 + dx;
                let y = cy as i64 + dy;
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    continue;
                }
                let d2 = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)) / (r * r);
                let k = y as usize * width + x as usize;
                pore_map[k] = pore_map[k].max((-d2).exp());
            }
        }
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let v = 1.0 - (y as f64 + 0.5) / height as f64;
            let b = blotch.at(u, v) - 0.5;
            let f = fine.at(u, v) - 0.5;
            let p = pore_map[y * width + x];
            for (c, &base) in tone.iter().enumerate() {
                let redness = if c == 0 { 0.05 } else { -0.03 };
                let val = base + 0.12 * b + redness * b + 0.04 * f - 0.18 * p;
                data.push(val.clamp(0.05, 0.9) as f32);
            }
        }
    }
    RasterMap::new(width, height, 3, data, ColorSpace::Srgb, MapKind::DiffuseAlbedo).expect("in range")
}

/// Two-tone sRGB checkerboard with `cells` squares along the width.
pub fn checker_albedo(width: usize, height: usize, cells: usize, a: [f32; 3], b: [f32; 3]) -> RasterMap {
    let size = (width / cells.max(1)).max(1);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let c = if ((x / size) + (y / size)).is_multiple_of(2) {
                a
            } else {
                b
            };
            data.extend_from_slice(&c);
        }
    }
    RasterMap::new(width, height, 3, data, ColorSpace::Srgb, MapKind::DiffuseAlbedo).expect("in range")
}

/// Lat-long environment: warm ground, cool sky, scaled by `gain`.
pub fn sky_environment(width: usize, height: usize, gain: f32, tint: [f32; 3]) -> RasterMap {
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let t = (y as f32 + 0.5) / height as f32;
        let sky = 1.0 - t;
        for x in 0..width {
            let s = (x as f32 + 0.5) / width as f32;
            let window = if (0.4..0.6).contains(&s) && t < 0.45 { 0.3 } else { 0.0 };
            for c in 0..3 {
                let base = 0.25 + 0.45 * sky + window;
                data.push((gain * base * tint[c]).clamp(0.0, 1.0));
            }
        }
    }
    RasterMap::new(width, height, 3, data, ColorSpace::Linear, MapKind::Generic).expect("in range")
}

/// Uniform environment of radiance `value` (a 1×1 lat-long map).
pub fn uniform_environment(value: f32) -> RasterMap {
    RasterMap::filled(1, 1, &[value; 3], ColorSpace::Linear, MapKind::Generic).expect("in range")
}

/// Environment plus key, fill and rim lights in front of a +Z-facing face.
pub fn studio_rig(seed: u64) -> LightingRig {
    LightingRig {
        environment: Some(sky_environment(32, 16, 0.5, [1.0, 0.97, 0.92])),
        point_lights: vec![
            PointLight {
                position: Vec3::new(-2.2, 1.4, 2.6),
                intensity: [2.6, 2.5, 2.4],
            },
            PointLight {
                position: Vec3::new(2.4, 0.6, 2.8),
                intensity: [1.6, 1.6, 1.7],
            },
            PointLight {
                position: Vec3::new(0.3, 2.8, 1.6),
                intensity: [1.2, 1.2, 1.2],
            },
        ],
        jitter_sigma: 0.0,
        seed,
    }
}

/// A rig with different geometry and color balance from [`studio_rig`].
pub fn sunset_rig(seed: u64) -> LightingRig {
    LightingRig {
        environment: Some(sky_environment(32, 16, 0.45, [1.0, 0.8, 0.6])),
        point_lights: vec![
            PointLight {
                position: Vec3::new(2.8, -0.4, 2.0),
                intensity: [3.0, 2.2, 1.5],
            },
            PointLight {
                position: Vec3::new(-1.5, 2.2, 3.0),
                intensity: [1.2, 1.3, 1.6],
            },
            PointLight {
                position: Vec3::new(-2.5, -1.5, 2.2),
                intensity: [0.9, 0.9, 1.0],
            },
        ],
        jitter_sigma: 0.0,
        seed,
    }
}

/// A procedural subject: template mesh and ground-truth sRGB albedo.
#[derive(Debug, Clone)]
pub struct SyntheticAsset {
    pub name: String,
    pub mesh: Mesh,
    pub albedo: RasterMap,
}

/// Three subjects sharing the dome template topology, albedo at `resolution`.
pub fn synthetic_assets(resolution: (usize, usize)) -> Vec<SyntheticAsset> {
    let (w, h) = resolution;
    let grid = (48, 32);
    vec![
        SyntheticAsset {
            name: "skin-plain".into(),
            mesh: dome_face_grid(grid.0, grid.1, FaceFeatures::default()),
            albedo: skin_albedo(w, h, 11),
        },
        SyntheticAsset {
            name: "checker-face".into(),
            mesh: dome_face_grid(grid.0, grid.1, FaceFeatures::face()),
            albedo: checker_albedo(w, h, 12, [0.75, 0.55, 0.45], [0.45, 0.32, 0.28]),
        },
        SyntheticAsset {
            name: "skin-face".into(),
            mesh: dome_face_grid(
                grid.0,
                grid.1,
                FaceFeatures {
                    nose: 0.15,
                    brows: 0.08,
                },
            ),
            albedo: skin_albedo(w, h, 29),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shape_normals;

    #[test]
    fn templates_share_topology() {
        let a = synthetic_assets((24, 16));
        assert!(a.iter().all(|s| s.mesh.topology_id() == a[0].mesh.topology_id()));
        assert!(a.iter().all(|s| s.mesh.triangles() == a[0].mesh.triangles()));
    }

    #[test]
    fn spheres_wind_outward() {
        for m in [icosphere(1), uv_sphere(8, 16)] {
            let n = shape_normals(&m).unwrap();
            for (p, n) in m.vertices().iter().zip(&n) {
                assert!(p.dot(n) > 0.9);
            }
        }
    }

    #[test]
    fn face_points_at_viewer() {
        let m = dome_face(8, FaceFeatures::face());
        let n = shape_normals(&m).unwrap();
        let center = n[n.len() / 2];
        assert!(center.z > 0.9);
    }
}
