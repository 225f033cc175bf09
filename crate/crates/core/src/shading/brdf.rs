//! GGX microfacet lobe with separable Smith shadowing. The Fresnel factor
//! is replaced by the specular albedo, applied by the caller.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::mesh::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrdfParams {
    /// GGX roughness, spatially constant, in `(0, 1]`.
    pub alpha: f64,
}

impl Default for BrdfParams {
    fn default() -> Self {
        BrdfParams { alpha: 0.35 }
    }
}

/// GGX normal distribution `D(h)`; integrates to 1 against `n·h`.
#[inline]
pub fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    if n_dot_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let c2 = n_dot_h * n_dot_h;
    let denom = c2 * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

/// Smith masking for one direction.
#[inline]
pub fn smith_g1(n_dot_w: f64, alpha: f64) -> f64 {
    if n_dot_w <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    2.0 * n_dot_w / (n_dot_w + (a2 + (1.0 - a2) * n_dot_w * n_dot_w).sqrt())
}

/// Specular lobe `f(n, l, v)` without the cosine; zero below either horizon.
#[inline]
pub fn f_spec(n: &Vec3, l: &Vec3, v: &Vec3, alpha: f64) -> f64 {
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= 0.0 {
        return 0.0;
    }
    let h = l + v;
    let len = h.norm();
    if len == 0.0 {
        return 0.0;
    }
    let nh = n.dot(&h) / len;
    ggx_d(nh, alpha) * smith_g1(nl, alpha) * smith_g1(nv, alpha) / (4.0 * nl * nv)
}

/// Lambertian BRDF of unit albedo.
pub const LAMBERT: f64 = 1.0 / PI;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_is_normalized() {
        for alpha in [0.2, 0.5, 0.9] {
            let n = 4000;
            let mut sum = 0.0;
            for i in 0..n {
                let theta = (i as f64 + 0.5) / n as f64 * PI / 2.0;
                sum += ggx_d(theta.cos(), alpha) * theta.cos() * theta.sin() * 2.0 * PI * (PI / 2.0 / n as f64);
            }
            assert!((sum - 1.0).abs() < 1e-3, "{alpha}: {sum}");
        }
    }

    #[test]
    fn lobe_is_symmetric_and_peaks_at_mirror() {
        let n = Vec3::z();
        let v = Vec3::new(0.6, 0.0, 0.8);
        let l = Vec3::new(-0.6, 0.0, 0.8);
        assert!((f_spec(&n, &l, &v, 0.35) - f_spec(&n, &v, &l, 0.35)).abs() < 1e-12);
        let off = Vec3::new(-0.3, 0.2, 0.9).normalize();
        assert!(f_spec(&n, &l, &v, 0.35) > f_spec(&n, &off, &v, 0.35));
        assert_eq!(f_spec(&n, &-l, &v, 0.35), 0.0);
    }
}
