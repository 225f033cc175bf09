//! Fixed-topology triangle meshes with per-vertex UVs.
//!
//! Geometry is kept in `f64`; only the rasters produced from it drop to
//! `f32`. UV texel centers follow `((x + 0.5) / W, 1 − (y + 0.5) / H)`, so
//! row 0 sits at the top of the UV square and V points up.

mod bvh;
mod obj;
mod tangent;
mod uv;

pub use bvh::{Bvh, Hit};
pub use obj::{load_obj, save_obj, TopologyManifest};
pub use tangent::{frame_field, object_to_tangent, tangent_frames, tangent_to_object, FrameField, TangentFrame};
pub use uv::{depth_map, rasterize_attribute, texel_center, UvCoverage};

use nalgebra::Vector3;
use thiserror::Error;

use crate::raster::{RasterError, RasterMap};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("vertex {0} is not referenced by any triangle")]
    Unreferenced(usize),
    #[error("uv of vertex {0} lies outside [0,1]^2")]
    UvRange(usize),
    #[error("non-finite coordinate at vertex {0}")]
    NonFinite(usize),
    #[error("uv count {uvs} differs from vertex count {vertices}")]
    UvCount { vertices: usize, uvs: usize },
    #[error("all triangles around vertex {0} are degenerate")]
    DegenerateStar(usize),
    #[error("degenerate depth range: every vertex has z = {0}")]
    DegenerateDepth(f64),
    #[error("resolution must be non-zero")]
    ZeroResolution,
    #[error("attribute has {got} values, expected {expected}")]
    AttributeLength { expected: usize, got: usize },
    #[error("attribute dimension {0} is not 1 or 3")]
    AttributeDim(usize),
    #[error("triangles {0} and {1} overlap in UV space near texel ({2}, {3})")]
    UvOverlap(usize, usize, usize, usize),
    #[error("texel ({x}, {y}) is valid in the input but outside the mesh UV coverage")]
    UncoveredTexel { x: usize, y: usize },
    #[error("displacement map must have one channel, found {0}")]
    DisplacementChannels(usize),
    #[error("OBJ parse error at line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

/// Triangle mesh on a fixed template topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    uvs: Vec<[f64; 2]>,
    topology_id: String,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        uvs: Vec<[f64; 2]>,
        topology_id: impl Into<String>,
    ) -> Result<Self> {
        if uvs.len() != vertices.len() {
            return Err(MeshError::UvCount {
                vertices: vertices.len(),
                uvs: uvs.len(),
            });
        }
        let n = vertices.len();
        let mut referenced = vec![false; n];
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= n {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        count: n,
                    });
                }
                referenced[i as usize] = true;
            }
        }
        if let Some(i) = referenced.iter().position(|r| !r) {
            return Err(MeshError::Unreferenced(i));
        }
        for (i, (p, uv)) in vertices.iter().zip(&uvs).enumerate() {
            if !p.iter().all(|c| c.is_finite()) || !uv.iter().all(|c| c.is_finite()) {
                return Err(MeshError::NonFinite(i));
            }
            if !uv.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(MeshError::UvRange(i));
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
            uvs,
            topology_id: topology_id.into(),
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    pub fn topology_id(&self) -> &str {
        &self.topology_id
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_positions(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Same topology and UVs with new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        Mesh::new(
            vertices,
            self.triangles.clone(),
            self.uvs.clone(),
            self.topology_id.clone(),
        )
    }

    /// Checks that no texel center at `resolution` lies strictly inside two
    /// UV triangles. A template property; run once per template.
    pub fn check_uv_overlap(&self, resolution: (usize, usize)) -> Result<()> {
        uv::check_overlap(self, resolution)
    }
}

/// Area-weighted per-vertex normals, unit length.
pub fn shape_normals(mesh: &Mesh) -> Result<Vec<Vec3>> {
    let mut acc = vec![Vec3::zeros(); mesh.vertex_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.triangle_positions(t);
        // |cross| is twice the triangle area, so the sum is area-weighted.
        let n = (b - a).cross(&(c - a));
        for &i in tri {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len <= f64::MIN_POSITIVE || !len.is_finite() {
                Err(MeshError::DegenerateStar(i))
            } else {
                Ok(n / len)
            }
        })
        .collect()
}

/// Midpoint (1:4) subdivision. Original vertices keep their indices;
/// edge midpoints are appended in first-encounter order.
pub fn subdivide(mesh: &Mesh, levels: u32) -> Mesh {
    let mut current = mesh.clone();
    for _ in 0..levels {
        current = subdivide_once(&current);
    }
    current
}

fn subdivide_once(mesh: &Mesh) -> Mesh {
    use std::collections::HashMap;

    let mut vertices = mesh.vertices.clone();
    let mut uvs = mesh.uvs.clone();
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
    let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>, uvs: &mut Vec<[f64; 2]>| {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a as usize], vertices[b as usize]);
            let (ua, ub) = (uvs[a as usize], uvs[b as usize]);
            vertices.push((pa + pb) * 0.5);
            uvs.push([(ua[0] + ub[0]) * 0.5, (ua[1] + ub[1]) * 0.5]);
            (vertices.len() - 1) as u32
        })
    };
    let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
    for &[a, b, c] in &mesh.triangles {
        let ab = midpoint(a, b, &mut vertices, &mut uvs);
        let bc = midpoint(b, c, &mut vertices, &mut uvs);
        let ca = midpoint(c, a, &mut vertices, &mut uvs);
        triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    Mesh {
        vertices,
        triangles,
        uvs,
        topology_id: mesh.topology_id.clone(),
    }
}

/// Result of [`emboss`].
#[derive(Debug, Clone)]
pub struct Embossed {
    pub mesh: Mesh,
    /// Vertices whose UV fell entirely on invalid texels (offset 0 used).
    pub invalid_samples: usize,
}

/// Moves every vertex by `scale · d(uv) · n` with `d` sampled bilinearly.
pub fn emboss(mesh: &Mesh, displacement: &RasterMap, scale: f64) -> Result<Embossed> {
    if displacement.channels() != 1 {
        return Err(MeshError::DisplacementChannels(displacement.channels()));
    }
    let normals = shape_normals(mesh)?;
    let mut invalid = 0usize;
    let vertices = mesh
        .vertices()
        .iter()
        .zip(mesh.uvs())
        .zip(&normals)
        .map(|((p, uv), n)| match sample_bilinear(displacement, *uv) {
            Some(d) => {
                let offset = scale * d;
                if offset == 0.0 {
                    *p
                } else {
                    p + n * offset
                }
            }
            None => {
                invalid += 1;
                *p
            }
        })
        .collect();
    if invalid > 0 {
        log::warn!("emboss: {invalid} vertices sampled only invalid texels");
    }
    Ok(Embossed {
        mesh: mesh.with_vertices(vertices)?,
        invalid_samples: invalid,
    })
}

/// Bilinear sample of channel 0 at `uv`; invalid neighbours are dropped and
/// the remaining weights renormalized. `None` if no neighbour is valid.
pub(crate) fn sample_bilinear(map: &RasterMap, uv: [f64; 2]) -> Option<f64> {
    let mut out = [0.0f64; 1];
    sample_bilinear_into(map, uv, &mut out).then_some(out[0])
}

pub(crate) fn sample_bilinear_into(map: &RasterMap, uv: [f64; 2], out: &mut [f64]) -> bool {
    let (w, h) = (map.width(), map.height());
    let fx = uv[0] * w as f64 - 0.5;
    let fy = (1.0 - uv[1]) * h as f64 - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (tx, ty) = (fx - x0, fy - y0);
    let clampi = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
    let xs = [clampi(x0, w), clampi(x0 + 1.0, w)];
    let ys = [clampi(y0, h), clampi(y0 + 1.0, h)];
    let weights = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (k, &wgt) in weights.iter().enumerate() {
        let i = ys[k / 2] * w + xs[k % 2];
        if wgt == 0.0 || !map.is_valid(i) {
            continue;
        }
        total += wgt;
        for (c, o) in out.iter_mut().enumerate() {
            *o += wgt * map.texel(i)[c] as f64;
        }
    }
    if total <= 0.0 {
        // all weight sat on invalid texels or on zero-weight corners
        let i = ys[usize::from(ty > 0.5)] * w + xs[usize::from(tx > 0.5)];
        if map.is_valid(i) {
            for (c, o) in out.iter_mut().enumerate() {
                *o = map.texel(i)[c] as f64;
            }
            return true;
        }
        return false;
    }
    out.iter_mut().for_each(|v| *v /= total);
    true
}
