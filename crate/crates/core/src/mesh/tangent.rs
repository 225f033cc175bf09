use rayon::prelude::*;

use super::{shape_normals, Mesh, MeshError, Result, UvCoverage, Vec3};
use crate::raster::{ColorSpace, MapKind, RasterMap};

/// Right-handed orthonormal frame: `tangent × bitangent = normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub normal: Vec3,
}

impl TangentFrame {
    /// Gram–Schmidt of `tangent` against the unit `normal`.
    pub fn orthonormalize(tangent: Vec3, normal: Vec3) -> Self {
        let mut t = tangent - normal * normal.dot(&tangent);
        if t.norm_squared() < 1e-20 {
            // tangent missing or parallel to the normal: any perpendicular will do
            let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            t = helper - normal * normal.dot(&helper);
        }
        let t = t.normalize();
        TangentFrame {
            tangent: t,
            bitangent: normal.cross(&t),
            normal,
        }
    }

    #[inline]
    pub fn to_local(&self, v: &Vec3) -> Vec3 {
        Vec3::new(self.tangent.dot(v), self.bitangent.dot(v), self.normal.dot(v))
    }

    #[inline]
    pub fn to_world(&self, v: &Vec3) -> Vec3 {
        self.tangent * v.x + self.bitangent * v.y + self.normal * v.z
    }
}

/// Per-vertex frames: UV-gradient tangents, area-weighted over incident
/// triangles, orthonormalized against the shape normal.
pub fn tangent_frames(mesh: &Mesh) -> Result<Vec<TangentFrame>> {
    let normals = shape_normals(mesh)?;
    let mut acc = vec![Vec3::zeros(); mesh.vertex_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [p0, p1, p2] = mesh.triangle_positions(t);
        let [u0, u1, u2] = tri.map(|i| mesh.uvs()[i as usize]);
        let (e1, e2) = (p1 - p0, p2 - p0);
        let (du1, dv1) = (u1[0] - u0[0], u1[1] - u0[1]);
        let (du2, dv2) = (u2[0] - u0[0], u2[1] - u0[1]);
        let det = du1 * dv2 - du2 * dv1;
        if det.abs() < 1e-300 {
            continue;
        }
        let dir = (e1 * dv2 - e2 * dv1) / det;
        let len = dir.norm();
        if len == 0.0 || !len.is_finite() {
            continue;
        }
        let area = 0.5 * e1.cross(&e2).norm();
        let weighted = dir / len * area;
        for &i in tri {
            acc[i as usize] += weighted;
        }
    }
    Ok(acc
        .into_iter()
        .zip(normals)
        .map(|(t, n)| TangentFrame::orthonormalize(t, n))
        .collect())
}

/// Per-texel frames interpolated from vertex frames over the UV coverage.
#[derive(Debug, Clone)]
pub struct FrameField {
    width: usize,
    height: usize,
    frames: Vec<Option<TangentFrame>>,
}

impl FrameField {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<&TangentFrame> {
        self.frames[i].as_ref()
    }
}

pub fn frame_field(mesh: &Mesh, frames: &[TangentFrame], coverage: &UvCoverage) -> FrameField {
    let tangents: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.tangent.iter().copied().collect::<Vec<_>>())
        .collect();
    let normals: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.normal.iter().copied().collect::<Vec<_>>())
        .collect();
    let (w, h) = coverage.dims();
    let frames = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut t = [0.0; 3];
            let mut n = [0.0; 3];
            if !coverage.interpolate(mesh, &tangents, 3, i, &mut t) {
                return None;
            }
            coverage.interpolate(mesh, &normals, 3, i, &mut n);
            let n = Vec3::from(n);
            let len = n.norm();
            (len > 0.0).then(|| TangentFrame::orthonormalize(Vec3::from(t), n / len))
        })
        .collect();
    FrameField {
        width: w,
        height: h,
        frames,
    }
}

fn transform(
    input: &RasterMap,
    field: &FrameField,
    kind: MapKind,
    f: impl Fn(&TangentFrame, &Vec3) -> Vec3 + Sync,
) -> Result<RasterMap> {
    input.expect_dims(field.dims())?;
    let (w, _) = field.dims();
    if let Some(i) = (0..input.texels()).find(|&i| input.is_valid(i) && field.get(i).is_none()) {
        return Err(MeshError::UncoveredTexel { x: i % w, y: i / w });
    }
    let mut data = vec![0.0f32; input.data().len()];
    data.par_chunks_mut(3).enumerate().for_each(|(i, out)| {
        if !input.is_valid(i) {
            return;
        }
        let Some(frame) = field.get(i) else { return };
        let n = input.texel(i);
        let v = f(frame, &Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64));
        let v = v / v.norm();
        for k in 0..3 {
            out[k] = (v[k] as f32).clamp(-1.0, 1.0);
        }
    });
    let mask = match input.mask() {
        Some(m) => m.to_vec(),
        None => vec![true; input.texels()],
    };
    Ok(RasterMap::with_mask(
        input.width(),
        input.height(),
        3,
        data,
        ColorSpace::SignedUnit,
        kind,
        Some(mask),
    )?)
}

/// Object-space normals to tangent space: `[t·n, b·n, nrm·n]` per texel.
pub fn object_to_tangent(normals_object: &RasterMap, field: &FrameField) -> Result<RasterMap> {
    transform(normals_object, field, MapKind::NormalsTangent, |f, n| f.to_local(n))
}

/// Inverse of [`object_to_tangent`]; output tagged `kind`.
pub fn tangent_to_object(normals_tangent: &RasterMap, field: &FrameField, kind: MapKind) -> Result<RasterMap> {
    transform(normals_tangent, field, kind, |f, n| f.to_world(n))
}
