//! Bounding volume hierarchy over mesh triangles for primary and shadow rays.

use super::{Mesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    #[inline]
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if inv_dir[a].is_infinite() {
                // ray parallel to this slab
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return false;
                }
                continue;
            }
            let ta = (self.min[a] - origin[a]) * inv_dir[a];
            let tb = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Closest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of the second and third vertex.
    pub bary: [f64; 2],
    /// `true` when the ray struck the side opposite the winding normal.
    pub backface: bool,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles().len())
            .map(|t| mesh.triangle_positions(t))
            .collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            build_node(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Bvh { nodes, order, tris }
    }

    /// Closest hit with `t` in `(t_min, t_max)`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        self.traverse(origin, dir, |tri, bvh| {
            if let Some((t, b1, b2, back)) = intersect_triangle(&bvh.tris[tri], origin, dir) {
                if t > t_min && t < limit {
                    limit = t;
                    best = Some(Hit {
                        t,
                        triangle: tri,
                        bary: [b1, b2],
                        backface: back,
                    });
                }
            }
            (false, limit)
        });
        best
    }

    /// `true` if anything blocks the open segment `from → to`.
    pub fn occluded(&self, from: &Vec3, to: &Vec3, eps: f64) -> bool {
        let d = to - from;
        let dist = d.norm();
        if dist <= eps {
            return false;
        }
        let dir = d / dist;
        let mut blocked = false;
        let t_max = dist - eps;
        self.traverse(from, &dir, |tri, bvh| {
            if let Some((t, ..)) = intersect_triangle(&bvh.tris[tri], from, &dir) {
                if t > eps && t < t_max {
                    blocked = true;
                }
            }
            (blocked, t_max)
        });
        blocked
    }

    /// Visits candidate triangles; the callback returns `(stop, t_limit)`.
    fn traverse(&self, origin: &Vec3, dir: &Vec3, mut visit: impl FnMut(usize, &Bvh) -> (bool, f64)) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut limit = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds().hit(origin, &inv, limit) {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &tri in &self.order[start..start + count] {
                        let (stop, l) = visit(tri, self);
                        limit = l;
                        if stop {
                            return;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in &order[start..end] {
        for p in &tris[t] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[t]);
    }
    let index = nodes.len();
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, count });
        return index;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = start + count / 2;
    order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, count });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    let mut merged = *nodes[left].bounds();
    merged.merge(nodes[right].bounds());
    nodes[index] = Node::Inner {
        bounds: merged,
        left,
        right,
    };
    index
}

/// Möller–Trumbore; returns `(t, b1, b2, backface)`.
#[inline]
fn intersect_triangle(tri: &[Vec3; 3], origin: &Vec3, dir: &Vec3) -> Option<(f64, f64, f64, bool)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    Some((t, u, v, det < 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    #[test]
    fn matches_brute_force_on_sphere() {
        let m = assets::icosphere(2);
        let bvh = Bvh::build(&m);
        let origins = [
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(0.3, -0.2, 4.0),
            Vec3::new(3.0, 1.0, 0.5),
        ];
        for o in origins {
            for k in 0..20 {
                let target = Vec3::new((k as f64 * 0.37).sin() * 0.8, (k as f64 * 0.91).cos() * 0.8, 0.0);
                let dir = (target - o).normalize();
                let hit = bvh.intersect(&o, &dir, 1e-9, f64::INFINITY);
                let brute = (0..m.triangles().len())
                    .filter_map(|t| intersect_triangle(&m.triangle_positions(t), &o, &dir).map(|h| h.0))
                    .filter(|&t| t > 1e-9)
                    .fold(f64::INFINITY, f64::min);
                match hit {
                    Some(h) => assert!((h.t - brute).abs() < 1e-12),
                    None => assert!(brute.is_infinite()),
                }
            }
        }
    }

    #[test]
    fn occlusion_by_sphere() {
        let m = assets::icosphere(2);
        let bvh = Bvh::build(&m);
        assert!(bvh.occluded(&Vec3::new(0.0, 0.0, -3.0), &Vec3::new(0.0, 0.0, 3.0), 1e-6));
        assert!(!bvh.occluded(&Vec3::new(2.0, 0.0, -3.0), &Vec3::new(2.0, 0.0, 3.0), 1e-6));
    }

    #[test]
    fn backface_flag_from_inside() {
        let m = assets::icosphere(2);
        let bvh = Bvh::build(&m);
        let h = bvh.intersect(&Vec3::zeros(), &Vec3::z(), 1e-9, f64::INFINITY).unwrap();
        assert!(h.backface);
        let h = bvh
            .intersect(&Vec3::new(0.0, 0.0, 3.0), &-Vec3::z(), 1e-9, f64::INFINITY)
            .unwrap();
        assert!(!h.backface);
    }
}
