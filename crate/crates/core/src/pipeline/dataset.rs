//! Simulated capture data: bakes of known albedos under jittered rigs, and
//! self-contained pipeline cases built from them.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, PipelineConfig, Profile, Resolution, RigConfig, TruthConfig};
use super::PipelineError;
use crate::assets::{studio_rig, sunset_rig, synthetic_assets, SyntheticAsset};
use crate::mesh::save_obj;
use crate::patch::Tiling;
use crate::raster::{load_raster, save_raster, MapKind, RasterMap};
use crate::rng::{derive_seed, Purpose};
use crate::shading::{bake_texture, LightingRig, ShadingParams};

/// One bake: asset `asset` under the rig of variation `variation`.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub asset: String,
    pub variation: usize,
    pub rig_seed: u64,
    pub texture: RasterMap,
}

/// Bakes plus the ground-truth albedo of every asset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<DatasetSample>,
    pub truth: IndexMap<String, RasterMap>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    asset: String,
    variation: usize,
    rig_seed: u64,
    texture: String,
}

/// `n_variations` bakes per asset; variation `k` of every asset shares the
/// rig seed derived from `(seed, k)`.
pub fn simulate_dataset(
    assets: &[SyntheticAsset],
    rig: &LightingRig,
    n_variations: usize,
    seed: u64,
    params: &ShadingParams,
) -> Result<Dataset, PipelineError> {
    let Some(first) = assets.first() else {
        return Err(PipelineError::Config("dataset needs at least one asset".into()));
    };
    for a in assets {
        if a.mesh.topology_id() != first.mesh.topology_id() {
            return Err(PipelineError::Config(format!(
                "asset {} does not share the template topology of {}",
                a.name, first.name
            )));
        }
    }
    let mut samples = Vec::with_capacity(assets.len() * n_variations);
    let mut truth = IndexMap::new();
    for a in assets {
        truth.insert(a.name.clone(), a.albedo.clone());
        for k in 0..n_variations {
            let rig_seed = derive_seed(seed, Purpose::Dataset, k as u64);
            let r = LightingRig {
                seed: rig_seed,
                ..rig.clone()
            };
            let texture = bake_texture(&a.albedo, &a.mesh, &r, params).map_err(|e| PipelineError::Stage {
                stage: "bake",
                last_good: None,
                source: e.into(),
            })?;
            samples.push(DatasetSample {
                asset: a.name.clone(),
                variation: k,
                rig_seed,
                texture,
            });
        }
    }
    Ok(Dataset { samples, truth })
}

impl Dataset {
    /// Writes `truth/<asset>.rmap`, `bakes/<asset>-<k>.rmap` and `index.json`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let io = |p: &Path, e: std::io::Error| PipelineError::input(p, e);
        for sub in ["truth", "bakes"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
        }
        for (name, map) in &self.truth {
            let p = dir.join("truth").join(format!("{name}.rmap"));
            save_raster(map, &p).map_err(|e| PipelineError::input(&p, e))?;
        }
        let mut index = Vec::new();
        for s in &self.samples {
            let rel = format!("bakes/{}-{}.rmap", s.asset, s.variation);
            let p = dir.join(&rel);
            save_raster(&s.texture, &p).map_err(|e| PipelineError::input(&p, e))?;
            index.push(IndexEntry {
                asset: s.asset.clone(),
                variation: s.variation,
                rig_seed: s.rig_seed,
                texture: rel,
            });
        }
        let p = dir.join("index.json");
        let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
        std::fs::write(&p, text).map_err(|e| io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let p = dir.join("index.json");
        let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::input(&p, e))?;
        let index: Vec<IndexEntry> = serde_json::from_str(&text).map_err(|e| PipelineError::input(&p, e))?;
        let mut truth = IndexMap::new();
        let mut samples = Vec::with_capacity(index.len());
        for e in index {
            if !truth.contains_key(&e.asset) {
                let t = dir.join("truth").join(format!("{}.rmap", e.asset));
                let map = load_raster(&t, MapKind::DiffuseAlbedo).map_err(|err| PipelineError::input(&t, err))?;
                truth.insert(e.asset.clone(), map);
            }
            let t = dir.join(&e.texture);
            let texture = load_raster(&t, MapKind::BakedTexture).map_err(|err| PipelineError::input(&t, err))?;
            samples.push(DatasetSample {
                asset: e.asset,
                variation: e.variation,
                rig_seed: e.rig_seed,
                texture,
            });
        }
        Ok(Dataset { samples, truth })
    }
}

/// Mean of the valid texels in each `k×k` block; a block with none is
/// zero and invalid.
pub fn box_downsample(map: &RasterMap, k: usize) -> Result<RasterMap, PipelineError> {
    let (w, h) = map.dims();
    if k == 0 || w % k != 0 || h % k != 0 {
        return Err(PipelineError::Config(format!("{w}×{h} is not divisible by {k}")));
    }
    let (lw, lh, c) = (w / k, h / k, map.channels());
    let mut data = vec![0.0f32; lw * lh * c];
    let mut mask = vec![false; lw * lh];
    for y in 0..lh {
        for x in 0..lw {
            let mut sum = vec![0.0f64; c];
            let mut n = 0usize;
            for yy in y * k..(y + 1) * k {
                for xx in x * k..(x + 1) * k {
                    let i = yy * w + xx;
                    if map.is_valid(i) {
                        n += 1;
                        for (s, v) in sum.iter_mut().zip(map.texel(i)) {
                            *s += *v as f64;
                        }
                    }
                }
            }
            let o = y * lw + x;
            if n > 0 {
                mask[o] = true;
                for (d, s) in data[o * c..(o + 1) * c].iter_mut().zip(&sum) {
                    *d = (s / n as f64) as f32;
                }
            }
        }
    }
    let mask = mask.iter().any(|v| !v).then_some(mask);
    RasterMap::with_mask(lw, lh, c, data, map.colorspace(), map.kind(), mask)
        .map_err(|e| PipelineError::Config(e.to_string()))
}

/// A case written by [`write_synthetic_case`].
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub config_path: PathBuf,
    pub config: PipelineConfig,
    pub asset: String,
}

/// Writes a complete pipeline case for synthetic asset `asset_index`: mesh,
/// truth albedo, capture environment, the capture bake at output resolution
/// (ζ passthrough) and its 8× box-downsampled texture.
pub fn write_synthetic_case(
    dir: &Path,
    profile: Profile,
    seed: u64,
    asset_index: usize,
) -> Result<SynthCase, PipelineError> {
    write_case(dir, profile, None, seed, asset_index)
}

/// [`write_synthetic_case`] at an explicit output resolution (a multiple of
/// 16 on both axes), with patch size a quarter of the height.
pub fn write_synthetic_case_sized(
    dir: &Path,
    profile: Profile,
    output: (usize, usize),
    seed: u64,
    asset_index: usize,
) -> Result<SynthCase, PipelineError> {
    if !output.0.is_multiple_of(16) || !output.1.is_multiple_of(16) {
        return Err(PipelineError::Config(format!("{output:?} is not a multiple of 16")));
    }
    write_case(dir, profile, Some(output), seed, asset_index)
}

fn write_case(
    dir: &Path,
    profile: Profile,
    output: Option<(usize, usize)>,
    seed: u64,
    asset_index: usize,
) -> Result<SynthCase, PipelineError> {
    let out = output.unwrap_or(profile.output_resolution());
    let assets = synthetic_assets(out);
    let asset = assets
        .get(asset_index)
        .ok_or_else(|| PipelineError::Config(format!("no synthetic asset {asset_index}")))?;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::input(dir, e))?;
    let save = |map: &RasterMap, name: &str| -> Result<PathBuf, PipelineError> {
        let p = dir.join(name);
        save_raster(map, &p).map_err(|e| PipelineError::input(&p, e))?;
        Ok(PathBuf::from(name))
    };
    let mesh = PathBuf::from("mesh.obj");
    save_obj(&asset.mesh, dir.join(&mesh)).map_err(|e| PipelineError::input(&dir.join(&mesh), e))?;
    let truth = save(&asset.albedo, "truth_albedo.rmap")?;

    let rig = studio_rig(derive_seed(seed, Purpose::Dataset, asset_index as u64));
    let relight = sunset_rig(seed);
    let env = save(
        rig.environment.as_ref().expect("studio rig has an environment"),
        "env.rmap",
    )?;
    let env_relight = save(
        relight.environment.as_ref().expect("sunset rig has an environment"),
        "env_sunset.rmap",
    )?;
    let shading = profile.shading();
    let hr = bake_texture(&asset.albedo, &asset.mesh, &rig, &shading).map_err(|e| PipelineError::Stage {
        stage: "bake",
        last_good: None,
        source: e.into(),
    })?;
    let texture_hr = save(&hr, "texture_hr.rmap")?;
    let texture = save(&box_downsample(&hr, 8)?, "texture.rmap")?;

    let mut render_rigs = IndexMap::new();
    render_rigs.insert("studio".to_string(), RigConfig::from_rig(&rig, Some(env.clone())));
    render_rigs.insert("sunset".to_string(), RigConfig::from_rig(&relight, Some(env_relight)));
    let mut config = PipelineConfig {
        mesh,
        texture,
        texture_hr: Some(texture_hr),
        rig: Some(RigConfig::from_rig(&rig, Some(env))),
        render_rigs,
        camera: None,
        operators: Default::default(),
        tiling: output.map(|(_, h)| Tiling {
            patch: h / 4,
            stride: Some(h / 8),
            blend: None,
        }),
        resolution: output.map(|o| Resolution {
            input: (o.0 / 8, o.1 / 8),
            output: o,
        }),
        profile,
        any_size: false,
        output_dir: PathBuf::from("out"),
        seed,
        emboss_scale: 0.002,
        subdivision_levels: 1,
        shading: Some(shading),
        params: Default::default(),
        truth: TruthConfig {
            diffuse_albedo: Some(truth),
            ..Default::default()
        },
    };
    config.operators.zeta = BackendConfig::Passthrough {};
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, config.to_json()).map_err(|e| PipelineError::input(&config_path, e))?;
    Ok(SynthCase {
        config_path,
        config,
        asset: asset.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::shading::PointLight;

    fn fast() -> ShadingParams {
        ShadingParams {
            env_samples: 8,
            ..Default::default()
        }
    }

    fn small_assets() -> Vec<SyntheticAsset> {
        synthetic_assets((48, 32))
    }

    #[test]
    fn single_unjittered_variation_is_deterministic() {
        let assets = &small_assets()[..1];
        let rig = studio_rig(1);
        let a = simulate_dataset(assets, &rig, 1, 5, &fast()).unwrap();
        let b = simulate_dataset(assets, &rig, 1, 5, &fast()).unwrap();
        assert_eq!(a.samples.len(), 1);
        assert_eq!(a.samples[0].texture, b.samples[0].texture);
    }

    #[test]
    fn jittered_variations_differ() {
        let assets = &small_assets()[..1];
        let rig = LightingRig {
            jitter_sigma: 0.4,
            environment: None,
            point_lights: vec![PointLight {
                position: crate::mesh::Vec3::new(0.5, 0.8, 2.0),
                intensity: [3.0; 3],
            }],
            seed: 0,
        };
        let d = simulate_dataset(assets, &rig, 3, 9, &fast()).unwrap();
        assert_eq!(d.samples.len(), 3);
        for i in 0..3 {
            for j in i + 1..3 {
                let p = psnr(&d.samples[i].texture, &d.samples[j].texture, None).unwrap();
                assert!(p.is_finite(), "bakes {i} and {j} are identical");
            }
        }
    }

    #[test]
    fn bundle_reloads_bit_identical() {
        let d = simulate_dataset(&small_assets(), &studio_rig(0), 2, 3, &fast()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.truth, d.truth);
        for (a, b) in back.samples.iter().zip(&d.samples) {
            assert_eq!(
                (a.asset.as_str(), a.variation, a.rig_seed),
                (b.asset.as_str(), b.variation, b.rig_seed)
            );
            assert_eq!(a.texture.data(), b.texture.data());
            assert_eq!(a.texture.mask(), b.texture.mask());
        }
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let mut assets = small_assets();
        assets[1].mesh = crate::assets::icosphere(1);
        assert!(simulate_dataset(&assets, &studio_rig(0), 1, 0, &fast()).is_err());
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let m = RasterMap::new(
            4,
            2,
            1,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            crate::raster::ColorSpace::Raw,
            MapKind::Generic,
        )
        .unwrap();
        let d = box_downsample(&m, 2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5]);
    }
}
