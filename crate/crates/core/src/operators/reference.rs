//! Analytic reference backends.

use std::sync::Arc;

use image::imageops::{resize, FilterType};
use image::{ImageBuffer, Rgb};
use rayon::prelude::*;

use super::filter::{blur, gradient, nearest_fill, Field};
use super::{finish_output, Contract, OperatorError, ReferenceParams, Result, Stage, TranslationOperator};
use crate::color::{luma, srgb_decode, srgb_encode};
use crate::mesh::Vec3;
use crate::raster::{MapStack, RasterMap};
use crate::shading::IrradianceComponents;

/// Gradient magnitudes below this are treated as zero, so flat detail
/// leaves the base normals bit-identical.
const FLAT: f64 = 1e-9;

fn layer_field(layer: &RasterMap) -> Field {
    Field::from_f32(layer.width(), layer.height(), layer.channels(), layer.data())
}

/// ζ: Lanczos-3 resampling by the contract scale.
#[derive(Debug, Clone)]
pub struct SrZeta {
    contract: Contract,
    /// Required input size; `None` accepts any size.
    pub expected: Option<(usize, usize)>,
}

impl SrZeta {
    pub fn new(expected: Option<(usize, usize)>) -> Self {
        SrZeta {
            contract: Stage::Zeta.contract(),
            expected,
        }
    }
}

impl TranslationOperator for SrZeta {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "reference"
    }

    fn whole_image(&self) -> bool {
        true
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        self.contract.check_input(input)?;
        let t = &input.layers()[0];
        let (w, h) = t.dims();
        if let Some(expected) = self.expected {
            if expected != (w, h) {
                return Err(OperatorError::InputSize {
                    name: self.contract.name.clone(),
                    expected,
                    got: (w, h),
                });
            }
        }
        let k = self.contract.scale;
        let img: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(w as u32, h as u32, t.data().to_vec()).expect("length checked by RasterMap");
        let up = resize(&img, (w * k) as u32, (h * k) as u32, FilterType::Lanczos3);
        let data: Vec<f32> = up.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mask = t.mask().map(|m| {
            (0..w * k * h * k)
                .map(|i| m[(i / (w * k)) / k * w + (i % (w * k)) / k])
                .collect()
        });
        finish_output(&self.contract, w * k, h * k, data, mask)
    }
}

/// δ with known lighting: `A_D = (lin(T̂) − S) / E`, sRGB-encoded.
#[derive(Debug, Clone)]
pub struct DelightDelta {
    contract: Contract,
    components: Arc<IrradianceComponents>,
    epsilon: f64,
}

/// [`DelightDelta::delight`] output.
#[derive(Debug, Clone)]
pub struct Delit {
    pub albedo: RasterMap,
    /// Texels whose irradiance fell below ε and were filled from a neighbour.
    pub low_irradiance: Vec<bool>,
}

impl DelightDelta {
    pub fn new(components: Arc<IrradianceComponents>, epsilon: f64) -> Self {
        DelightDelta {
            contract: Stage::Delta.contract(),
            components,
            epsilon,
        }
    }

    pub fn components(&self) -> &IrradianceComponents {
        &self.components
    }

    pub fn delight(&self, input: &MapStack) -> Result<Delit> {
        self.contract.check_input(input)?;
        let t = &input.layers()[0];
        t.expect_dims(self.components.dims())?;
        let (w, h) = t.dims();
        let e = &self.components.irradiance;
        let s = &self.components.specular;
        let n = w * h;
        let valid: Vec<bool> = (0..n).map(|i| t.is_valid(i) && e.is_valid(i)).collect();
        let low: Vec<bool> = (0..n)
            .map(|i| valid[i] && e.texel(i).iter().any(|&v| (v as f64) < self.epsilon))
            .collect();
        let mut data = vec![0.0f32; n * 3];
        data.par_chunks_mut(3).enumerate().for_each(|(i, out)| {
            if !valid[i] || low[i] {
                return;
            }
            let (tv, ev, sv) = (t.texel(i), e.texel(i), s.texel(i));
            for c in 0..3 {
                let lin = (srgb_decode(tv[c] as f64) - sv[c] as f64) / ev[c] as f64;
                out[c] = srgb_encode(lin.clamp(0.0, 1.0)) as f32;
            }
        });
        let source: Vec<bool> = (0..n).map(|i| valid[i] && !low[i]).collect();
        // unreachable texels (no lit neighbour at all) stay black
        nearest_fill(&mut data, 3, w, &source, &low);
        let all = valid.iter().all(|&v| v);
        let albedo = finish_output(&self.contract, w, h, data, (!all).then_some(valid))?;
        Ok(Delit {
            albedo,
            low_irradiance: low,
        })
    }
}

impl TranslationOperator for DelightDelta {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "reference"
    }

    fn whole_image(&self) -> bool {
        true
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        Ok(self.delight(input)?.albedo)
    }
}

/// ψ: `A_S = clamp(s₀·(1 − κ·H))`, `H = min(|g − blur(g)| / h_ref, 1)` on luma.
#[derive(Debug, Clone)]
pub struct SpecAlbedoPsi {
    contract: Contract,
    params: ReferenceParams,
}

impl SpecAlbedoPsi {
    pub fn new(params: ReferenceParams) -> Self {
        SpecAlbedoPsi {
            contract: Stage::Psi.contract(),
            params,
        }
    }
}

impl TranslationOperator for SpecAlbedoPsi {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "reference"
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        self.contract.check_input(input)?;
        let a = &input.layers()[0];
        let (w, h) = a.dims();
        let p = &self.params;
        let gray: Vec<f32> = a.data().chunks_exact(3).map(luma).collect();
        let g = Field::from_f32(w, h, 1, &gray);
        let b = blur(&g, a.mask(), p.sigma_b);
        let data = (0..w * h)
            .map(|i| {
                if !a.is_valid(i) {
                    return 0.0;
                }
                let hp = (g.data[i] - b.data[i]).abs();
                let occ = (hp / p.highpass_ref).min(1.0);
                (p.s0 * (1.0 - p.kappa * occ)).clamp(0.0, 1.0) as f32
            })
            .collect();
        finish_output(&self.contract, w, h, data, a.mask().map(<[bool]>::to_vec))
    }
}

/// ρ: `N_S = normalize(N_T + β·(−∂g/∂x, −∂g/∂y, 0))` with `g` the lightly
/// smoothed gray map, so dark features read as recessed.
#[derive(Debug, Clone)]
pub struct SpecNormalsRho {
    contract: Contract,
    params: ReferenceParams,
}

impl SpecNormalsRho {
    pub fn new(params: ReferenceParams) -> Self {
        SpecNormalsRho {
            contract: Stage::Rho.contract(),
            params,
        }
    }
}

impl TranslationOperator for SpecNormalsRho {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "reference"
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        self.contract.check_input(input)?;
        let (g, nt) = (&input.layers()[0], &input.layers()[1]);
        let (w, h) = g.dims();
        let mask = input.mask();
        let smooth = blur(&layer_field(g), mask.as_deref(), self.params.sigma_rho);
        let (gx, gy) = gradient(&smooth, mask.as_deref());
        let beta = self.params.beta;
        let mut data = nt.data().to_vec();
        data.par_chunks_mut(3).enumerate().for_each(|(i, out)| {
            let (dx, dy) = (-beta * gx[i], -beta * gy[i]);
            if dx.abs() < FLAT && dy.abs() < FLAT || mask.as_ref().is_some_and(|m| !m[i]) {
                return;
            }
            let v = Vec3::new(out[0] as f64 + dx, out[1] as f64 + dy, out[2] as f64).normalize();
            for c in 0..3 {
                out[c] = (v[c] as f32).clamp(-1.0, 1.0);
            }
        });
        finish_output(&self.contract, w, h, data, mask)
    }
}

/// σ: blurred shape normals plus `γ` times the gradient of the equally
/// blurred gray map, applied along a surface frame whose tangent follows
/// object +X.
#[derive(Debug, Clone)]
pub struct DiffNormalsSigma {
    contract: Contract,
    params: ReferenceParams,
}

impl DiffNormalsSigma {
    pub fn new(params: ReferenceParams) -> Self {
        DiffNormalsSigma {
            contract: Stage::Sigma.contract(),
            params,
        }
    }
}

/// Tangent and bitangent around `n` with the tangent closest to +X.
fn surface_frame(n: &Vec3) -> (Vec3, Vec3) {
    let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t = (axis - n * n.dot(&axis)).normalize();
    (t, n.cross(&t))
}

impl TranslationOperator for DiffNormalsSigma {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "reference"
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        self.contract.check_input(input)?;
        let (g, no) = (&input.layers()[0], &input.layers()[1]);
        let (w, h) = g.dims();
        let mask = input.mask();
        let sd = self.params.sigma_d;
        let nb = blur(&layer_field(no), mask.as_deref(), sd);
        let gb = blur(&layer_field(g), mask.as_deref(), sd);
        let (gx, gy) = gradient(&gb, mask.as_deref());
        let gamma = self.params.gamma;
        let mut data = vec![0.0f32; w * h * 3];
        data.par_chunks_mut(3).enumerate().for_each(|(i, out)| {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                return;
            }
            let b = nb.texel(i);
            let base = Vec3::new(b[0], b[1], b[2]);
            let len = base.norm();
            if len == 0.0 {
                return;
            }
            let mut v = base / len;
            let (dx, dy) = (-gamma * gx[i], -gamma * gy[i]);
            if dx.abs() >= FLAT || dy.abs() >= FLAT {
                let (t, bt) = surface_frame(&v);
                v = (v + t * dx + bt * dy).normalize();
            }
            for c in 0..3 {
                out[c] = (v[c] as f32).clamp(-1.0, 1.0);
            }
        });
        finish_output(&self.contract, w, h, data, mask)
    }
}
