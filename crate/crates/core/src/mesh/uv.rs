use rayon::prelude::*;

use super::{Mesh, MeshError, Result};
use crate::raster::{ColorSpace, MapKind, RasterMap};

const NO_TRIANGLE: u32 = u32::MAX;
const BAND_ROWS: usize = 16;

/// UV coordinate of the center of texel `(x, y)`.
#[inline]
pub fn texel_center(x: usize, y: usize, width: usize, height: usize) -> [f64; 2] {
    [(x as f64 + 0.5) / width as f64, 1.0 - (y as f64 + 0.5) / height as f64]
}

/// Per-texel triangle id and barycentrics of a mesh's UV layout.
///
/// Built once per (mesh, resolution) and reused by every rasterized
/// attribute. A texel is covered when its center passes the inclusive
/// half-space test of some UV triangle; ties go to the lowest triangle
/// index.
#[derive(Debug, Clone)]
pub struct UvCoverage {
    width: usize,
    height: usize,
    triangle: Vec<u32>,
    /// Barycentric weights of the triangle's second and third vertex.
    bary: Vec<[f64; 2]>,
}

struct UvTriangle {
    p: [[f64; 2]; 3],
    area: f64,
}

impl UvTriangle {
    fn new(mesh: &Mesh, t: usize) -> Self {
        let [a, b, c] = mesh.triangles()[t];
        let p = [mesh.uvs()[a as usize], mesh.uvs()[b as usize], mesh.uvs()[c as usize]];
        let area = edge(p[0], p[1], p[2]);
        UvTriangle { p, area }
    }

    /// `(b1, b2)` when `q` is inside (inclusive) the triangle.
    #[inline]
    fn barycentric(&self, q: [f64; 2]) -> Option<[f64; 2]> {
        if self.area == 0.0 {
            return None;
        }
        let w0 = edge(self.p[1], self.p[2], q);
        let w1 = edge(self.p[2], self.p[0], q);
        let w2 = edge(self.p[0], self.p[1], q);
        let s = self.area.signum();
        if w0 * s < 0.0 || w1 * s < 0.0 || w2 * s < 0.0 {
            return None;
        }
        Some([w1 / self.area, w2 / self.area])
    }

    /// Texel row/column range touched by the bounding box.
    fn texel_bounds(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for q in &self.p {
            umin = umin.min(q[0]);
            umax = umax.max(q[0]);
            vmin = vmin.min(q[1]);
            vmax = vmax.max(q[1]);
        }
        let xs = |u: f64| u * width as f64 - 0.5;
        let ys = |v: f64| (1.0 - v) * height as f64 - 0.5;
        let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
        (
            clamp(xs(umin).floor(), width),
            clamp(xs(umax).ceil(), width),
            clamp(ys(vmax).floor(), height),
            clamp(ys(vmin).ceil(), height),
        )
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
}

impl UvCoverage {
    pub fn new(mesh: &Mesh, resolution: (usize, usize)) -> Result<Self> {
        let (width, height) = resolution;
        if width == 0 || height == 0 {
            return Err(MeshError::ZeroResolution);
        }
        let tris: Vec<UvTriangle> = (0..mesh.triangles().len()).map(|t| UvTriangle::new(mesh, t)).collect();
        let bands = height.div_ceil(BAND_ROWS);
        let mut per_band: Vec<Vec<u32>> = vec![Vec::new(); bands];
        let mut bounds = Vec::with_capacity(tris.len());
        for (t, tri) in tris.iter().enumerate() {
            let b = tri.texel_bounds(width, height);
            for list in &mut per_band[b.2 / BAND_ROWS..=b.3 / BAND_ROWS] {
                list.push(t as u32);
            }
            bounds.push(b);
        }

        let mut triangle = vec![NO_TRIANGLE; width * height];
        let mut bary = vec![[0.0; 2]; width * height];
        triangle
            .par_chunks_mut(BAND_ROWS * width)
            .zip(bary.par_chunks_mut(BAND_ROWS * width))
            .enumerate()
            .for_each(|(band, (tri_out, bary_out))| {
                let y_base = band * BAND_ROWS;
                let rows = tri_out.len() / width;
                for &t in &per_band[band] {
                    let (x0, x1, y0, y1) = bounds[t as usize];
                    let tri = &tris[t as usize];
                    for y in y0.max(y_base)..=y1.min(y_base + rows - 1) {
                        for x in x0..=x1 {
                            let k = (y - y_base) * width + x;
                            if tri_out[k] != NO_TRIANGLE {
                                continue;
                            }
                            if let Some(b) = tri.barycentric(texel_center(x, y, width, height)) {
                                tri_out[k] = t;
                                bary_out[k] = b;
                            }
                        }
                    }
                }
            });
        Ok(UvCoverage {
            width,
            height,
            triangle,
            bary,
        })
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

    /// Triangle index and `(b1, b2)` of the texel at linear index `i`.
    #[inline]
    pub fn sample(&self, i: usize) -> Option<(usize, [f64; 2])> {
        let t = self.triangle[i];
        (t != NO_TRIANGLE).then(|| (t as usize, self.bary[i]))
    }

    pub fn mask(&self) -> Vec<bool> {
        self.triangle.iter().map(|&t| t != NO_TRIANGLE).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.triangle.iter().filter(|&&t| t != NO_TRIANGLE).count()
    }

    /// Interpolates a per-vertex attribute at texel `i` into `out`.
    ///
    /// Evaluated as `a0 + b1·(a1 − a0) + b2·(a2 − a0)` so that constant
    /// attributes reproduce exactly.
    #[inline]
    pub fn interpolate(&self, mesh: &Mesh, values: &[f64], dim: usize, i: usize, out: &mut [f64]) -> bool {
        let Some((t, [b1, b2])) = self.sample(i) else {
            return false;
        };
        let [a, b, c] = mesh.triangles()[t];
        for (k, o) in out.iter_mut().enumerate().take(dim) {
            let v0 = values[a as usize * dim + k];
            let v1 = values[b as usize * dim + k];
            let v2 = values[c as usize * dim + k];
            *o = v0 + b1 * (v1 - v0) + b2 * (v2 - v0);
        }
        true
    }
}

/// Rasterizes a per-vertex attribute (`dim` ∈ {1, 3}) into UV space.
/// Uncovered texels are zero and masked invalid; normal kinds are
/// renormalized per texel.
pub fn rasterize_attribute(
    mesh: &Mesh,
    coverage: &UvCoverage,
    values: &[f64],
    dim: usize,
    kind: MapKind,
    colorspace: ColorSpace,
) -> Result<RasterMap> {
    if dim != 1 && dim != 3 {
        return Err(MeshError::AttributeDim(dim));
    }
    let expected = mesh.vertex_count() * dim;
    if values.len() != expected {
        return Err(MeshError::AttributeLength {
            expected,
            got: values.len(),
        });
    }
    let (w, h) = coverage.dims();
    let range = colorspace.range();
    let mut data = vec![0.0f32; w * h * dim];
    data.par_chunks_mut(dim).enumerate().for_each(|(i, out)| {
        let mut v = [0.0f64; 3];
        if !coverage.interpolate(mesh, values, dim, i, &mut v) {
            return;
        }
        if kind.is_normals() {
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 0.0 {
                v.iter_mut().for_each(|c| *c /= len);
            }
        }
        for (o, &c) in out.iter_mut().zip(&v) {
            *o = match range {
                Some((lo, hi)) => (c as f32).clamp(lo, hi),
                None => c as f32,
            };
        }
    });
    Ok(RasterMap::with_mask(
        w,
        h,
        dim,
        data,
        colorspace,
        kind,
        Some(coverage.mask()),
    )?)
}

/// Object-space depth `D_O`: vertex Z mapped affinely to `[−1, 1]` over the
/// mesh's own Z range, then rasterized.
pub fn depth_map(mesh: &Mesh, coverage: &UvCoverage) -> Result<RasterMap> {
    let (zmin, zmax) = mesh
        .vertices()
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    if zmax <= zmin {
        return Err(MeshError::DegenerateDepth(zmin));
    }
    let span = zmax - zmin;
    let z: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| {
            if p.z == zmin {
                -1.0
            } else if p.z == zmax {
                1.0
            } else {
                2.0 * (p.z - zmin) / span - 1.0
            }
        })
        .collect();
    rasterize_attribute(mesh, coverage, &z, 1, MapKind::Depth, ColorSpace::SignedUnit)
}

pub(super) fn check_overlap(mesh: &Mesh, resolution: (usize, usize)) -> Result<()> {
    let (w, h) = resolution;
    if w == 0 || h == 0 {
        return Err(MeshError::ZeroResolution);
    }
    let mut owner = vec![NO_TRIANGLE; w * h];
    for t in 0..mesh.triangles().len() {
        let tri = UvTriangle::new(mesh, t);
        let (x0, x1, y0, y1) = tri.texel_bounds(w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let q = texel_center(x, y, w, h);
                // strict interior only; shared edges are not overlaps
                let Some([b1, b2]) = tri.barycentric(q) else { continue };
                let b0 = 1.0 - b1 - b2;
                if b0 <= 1e-9 || b1 <= 1e-9 || b2 <= 1e-9 {
                    continue;
                }
                let k = y * w + x;
                if owner[k] != NO_TRIANGLE {
                    return Err(MeshError::UvOverlap(owner[k] as usize, t, x, y));
                }
                owner[k] = t as u32;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::mesh::Vec3;
    use proptest::prelude::*;

    /// Brute-force coverage: every texel center against every triangle,
    /// using same-sign cross products.
    fn oracle_covered(mesh: &Mesh, w: usize, h: usize) -> usize {
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let q = ((x as f64 + 0.5) / w as f64, 1.0 - (y as f64 + 0.5) / h as f64);
                let inside = mesh.triangles().iter().any(|tri| {
                    let p: Vec<(f64, f64)> = tri
                        .iter()
                        .map(|&i| (mesh.uvs()[i as usize][0], mesh.uvs()[i as usize][1]))
                        .collect();
                    let cross = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
                    let d = [cross(p[0], p[1]), cross(p[1], p[2]), cross(p[2], p[0])];
                    let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[1].1 - p[0].1) * (p[2].0 - p[0].0);
                    area != 0.0 && (d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0))
                });
                count += usize::from(inside);
            }
        }
        count
    }

    fn triangle_mesh() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            vec![[0.1, 0.1], [0.9, 0.2], [0.3, 0.85]],
            "tri",
        )
        .unwrap()
    }

    #[test]
    fn zero_resolution_rejected() {
        assert!(matches!(
            UvCoverage::new(&triangle_mesh(), (0, 4)),
            Err(MeshError::ZeroResolution)
        ));
    }

    #[test]
    fn constant_attribute() {
        let m = triangle_mesh();
        let cov = UvCoverage::new(&m, (32, 32)).unwrap();
        let r = rasterize_attribute(&m, &cov, &[0.7; 3], 1, MapKind::Gray, ColorSpace::Raw).unwrap();
        for i in 0..r.texels() {
            if r.is_valid(i) {
                assert_eq!(r.data()[i], 0.7f64 as f32);
            } else {
                assert_eq!(r.data()[i], 0.0);
            }
        }
        assert!(r.valid_count() > 0 && r.valid_count() < r.texels());
    }

    #[test]
    fn centroid_texel_gets_one_third() {
        // texel (1, 1) of a 3x3 raster has center (0.5, 0.5), the UV centroid
        let uvs = vec![[0.2, 0.3], [0.8, 0.3], [0.5, 0.9]];
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]], uvs, "c").unwrap();
        let cov = UvCoverage::new(&m, (3, 3)).unwrap();
        let r = rasterize_attribute(&m, &cov, &[0.0, 0.0, 1.0], 1, MapKind::Gray, ColorSpace::Raw).unwrap();
        assert!((r.at(1, 1)[0] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn coverage_matches_bruteforce_oracle() {
        let face = assets::dome_face(12, assets::FaceFeatures::default());
        let tri = triangle_mesh();
        for (mesh, w, h) in [(&face, 48, 32), (&tri, 37, 23), (&face, 17, 29)] {
            let cov = UvCoverage::new(mesh, (w, h)).unwrap();
            assert_eq!(cov.covered_count(), oracle_covered(mesh, w, h));
        }
    }

    #[test]
    fn template_face_has_no_uv_overlap() {
        let face = assets::dome_face(12, assets::FaceFeatures::default());
        face.check_uv_overlap((96, 64)).unwrap();
        let sphere = assets::icosphere(2);
        assert!(matches!(
            sphere.check_uv_overlap((64, 32)),
            Err(MeshError::UvOverlap(..))
        ));
    }

    #[test]
    fn depth_endpoints_and_degenerate() {
        let m = assets::two_planes();
        let cov = UvCoverage::new(&m, (16, 8)).unwrap();
        let d = depth_map(&m, &cov).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                let v = d.at(x, y)[0];
                if x < 8 {
                    assert_eq!(v, -1.0);
                } else {
                    assert_eq!(v, 1.0);
                }
            }
        }
        let flat = assets::quad(0.3, [0.0, 0.0, 1.0, 1.0]);
        let cov = UvCoverage::new(&flat, (4, 4)).unwrap();
        let err = depth_map(&flat, &cov).unwrap_err();
        assert!(err.to_string().contains("degenerate depth range"));
    }

    #[test]
    fn sphere_depth_histogram_is_symmetric() {
        let s = assets::uv_sphere(32, 64);
        let cov = UvCoverage::new(&s, (128, 64)).unwrap();
        let d = depth_map(&s, &cov).unwrap();
        let (mut pos, mut neg, mut n) = (0usize, 0usize, 0usize);
        for i in 0..d.texels() {
            if d.is_valid(i) {
                n += 1;
                let v = d.data()[i];
                if v > 0.0 {
                    pos += 1;
                } else if v < 0.0 {
                    neg += 1;
                }
            }
        }
        let imbalance = (pos as f64 - neg as f64).abs() / n as f64;
        assert!(imbalance <= 0.02, "imbalance {imbalance}");
        // finer distribution check: mirrored histogram bins agree
        let mut bins = [0usize; 20];
        for i in 0..d.texels() {
            if d.is_valid(i) {
                let b = (((d.data()[i] + 1.0) * 10.0) as usize).min(19);
                bins[b] += 1;
            }
        }
        let asym: usize = (0..10).map(|b| bins[b].abs_diff(bins[19 - b])).sum();
        assert!(
            asym as f64 / n as f64 <= 0.02,
            "bin asymmetry {}",
            asym as f64 / n as f64
        );
    }

    proptest! {
        #[test]
        fn rasterization_is_linear(
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
        ) {
            let m = triangle_mesh();
            let cov = UvCoverage::new(&m, (24, 24)).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let ra = rasterize_attribute(&m, &cov, &a, 1, MapKind::Gray, ColorSpace::Raw).unwrap();
            let rb = rasterize_attribute(&m, &cov, &b, 1, MapKind::Gray, ColorSpace::Raw).unwrap();
            let rc = rasterize_attribute(&m, &cov, &combo, 1, MapKind::Gray, ColorSpace::Raw).unwrap();
            for i in 0..rc.texels() {
                let lin = alpha * ra.data()[i] as f64 + beta * rb.data()[i] as f64;
                prop_assert!((rc.data()[i] as f64 - lin).abs() <= 1e-6);
            }
        }
    }
}
