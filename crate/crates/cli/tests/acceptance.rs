//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use facerefl::assets::{self, studio_rig, sunset_rig, synthetic_assets};
use facerefl::displacement::{integrate, SlopeField};
use facerefl::mesh::{
    depth_map, frame_field, object_to_tangent, rasterize_attribute, shape_normals, tangent_frames, tangent_to_object,
    UvCoverage, Vec3,
};
use facerefl::metrics::{psnr, psnr_counted};
use facerefl::operators::{Contract, DelightDelta, ExternalOperator, OperatorError, TranslationOperator};
use facerefl::patch::{apply_tiled, plan_grid, stitch, PatchError, Tiling};
use facerefl::pipeline::{PipelineConfig, Profile};
use facerefl::raster::{load_raster, stack, ColorSpace, MapKind, RasterMap};
use facerefl::shading::{
    compose_bake, irradiance_components, lobe_albedo, render, Camera, LightingRig, ReflectanceSet, ShadingParams,
};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const DESK: (usize, usize) = (1152, 768);

/// δ output of one asset under one rig, kept for the consistency check.
struct Delit {
    albedo: RasterMap,
    usable: Vec<bool>,
}

fn delight(
    asset: &assets::SyntheticAsset,
    rig: &LightingRig,
    params: &ShadingParams,
) -> Result<(Delit, Vec<bool>, f64), String> {
    let comps = irradiance_components(&asset.mesh, rig, params, DESK).map_err(e2s)?;
    let baked = compose_bake(&asset.albedo, &comps)
        .map_err(e2s)?
        .retag(MapKind::Texture)
        .map_err(e2s)?;
    let cov = UvCoverage::new(&asset.mesh, DESK).map_err(e2s)?;
    let depth = depth_map(&asset.mesh, &cov).map_err(e2s)?;
    let start = Instant::now();
    // the inverse recomputes illumination from the rig alone
    let inverse = irradiance_components(&asset.mesh, rig, params, DESK).map_err(e2s)?;
    let op = DelightDelta::new(Arc::new(inverse), 0.02);
    let d = op.delight(&stack(vec![baked, depth]).map_err(e2s)?).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    let lit: Vec<bool> = (0..d.albedo.texels())
        .map(|i| d.albedo.is_valid(i) && !comps.shadowed[i] && comps.irradiance.texel(i).iter().all(|&e| e >= 0.05))
        .collect();
    let usable = (0..d.albedo.texels())
        .map(|i| d.albedo.is_valid(i) && !d.low_irradiance[i])
        .collect();
    Ok((
        Delit {
            albedo: d.albedo,
            usable,
        },
        lit,
        secs,
    ))
}

fn c1_delight_round_trip(studio: &mut Vec<Delit>) -> Outcome {
    let params = Profile::Desk.shading();
    let rig = studio_rig(7);
    let mut lines = Vec::new();
    for asset in synthetic_assets(DESK) {
        let (d, lit, secs) = delight(&asset, &rig, &params)?;
        let (db, n) = psnr_counted(&d.albedo, &asset.albedo, Some(&lit)).map_err(e2s)?;
        ensure(db >= 40.0, || format!("{}: {db:.2} dB < 40 dB", asset.name))?;
        ensure(secs <= 60.0, || format!("{}: de-lighting took {secs:.1} s", asset.name))?;
        lines.push(format!("{} {db:.1} dB/{n} texels/{secs:.1} s", asset.name));
        studio.push(d);
    }
    Ok(lines.join(", "))
}

fn c2_lighting_consistency(studio: &[Delit]) -> Outcome {
    let params = Profile::Desk.shading();
    let assets = synthetic_assets(DESK);
    let k = 2;
    let a = studio.get(k).ok_or("studio de-lighting missing")?;
    let (b, _, _) = delight(&assets[k], &sunset_rig(7), &params)?;
    let both: Vec<bool> = a.usable.iter().zip(&b.usable).map(|(x, y)| *x && *y).collect();
    let (db, n) = psnr_counted(&a.albedo, &b.albedo, Some(&both)).map_err(e2s)?;
    ensure(db >= 35.0, || format!("studio vs sunset {db:.2} dB < 35 dB"))?;
    Ok(format!(
        "{}: studio vs sunset {db:.1} dB over {n} texels",
        assets[k].name
    ))
}

fn c3_furnace() -> Outcome {
    let mesh = assets::icosphere(3);
    let rig = LightingRig {
        environment: Some(assets::uniform_environment(1.0)),
        ..LightingRig::dark()
    };
    let params = ShadingParams {
        env_samples: 4096,
        ..Default::default()
    };
    let refl = ReflectanceSet::uniform(16, 16, [1.0; 3], 0.0).map_err(e2s)?;
    let camera = Camera::frontal(4.0, 24, 24);
    let img = render(&mesh, &refl, &camera, &rig, &params).map_err(e2s)?;
    let mut worst = 0.0f64;
    let mut n = 0;
    for (i, &m) in img.mask.iter().enumerate() {
        if m {
            n += 1;
            for c in 0..3 {
                worst = worst.max((img.data[3 * i + c] as f64 - 1.0).abs());
            }
        }
    }
    ensure(n > 0, || "sphere not visible".into())?;
    ensure(worst <= 0.02, || format!("max deviation {worst:.4}"))?;
    Ok(format!("{n} pixels, max |L−1| = {worst:.4}"))
}

fn c4_lobe_normalization() -> Outcome {
    let mut lines = Vec::new();
    for alpha in [0.1, 0.35, 0.8] {
        let worst = (0..=17)
            .map(|k| lobe_albedo(alpha, k as f64 * 5.0 * PI / 180.0, 64, 64))
            .fold(0.0f64, f64::max);
        ensure(worst <= 1.0, || {
            format!("α={alpha}: hemisphere integral {worst:.4} > 1")
        })?;
        lines.push(format!("α={alpha}: max {worst:.4}"));
    }
    Ok(lines.join(", "))
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn c5_poisson() -> Outcome {
    let (w, h) = (192, 128);
    let plane: Vec<f64> = (0..w * h)
        .map(|i| 0.03 * (i % w) as f64 - 0.02 * (i / w) as f64 + 5.0)
        .collect();
    let amp = 2.0;
    let sine: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            amp * (2.0 * PI * x / 48.0).sin() * (2.0 * PI * y / 32.0).cos()
        })
        .collect();
    let mut lines = Vec::new();
    for (name, truth, bound) in [("plane", &plane, 1e-6), ("sinusoid", &sine, 1e-3 * amp)] {
        let r = integrate(&SlopeField::from_heights(w, h, truth)).map_err(e2s)?;
        let err = rmse(&centered(&r.heights), &centered(truth));
        ensure(err <= bound, || format!("{name}: RMSE {err:.3e} > {bound:.1e}"))?;
        ensure(r.relative_residual <= 1e-8, || {
            format!("{name}: residual {:.3e}", r.relative_residual)
        })?;
        lines.push(format!("{name} RMSE {err:.2e}, residual {:.2e}", r.relative_residual));
    }
    Ok(lines.join(", "))
}

fn c6_tiling() -> Outcome {
    let (w, h) = (200, 136);
    let src = assets::skin_albedo(w, h, 3).retag(MapKind::Texture).map_err(e2s)?;
    let s = stack(vec![src.clone()]).map_err(e2s)?;
    let tiling = Tiling {
        patch: 64,
        stride: Some(32),
        blend: None,
    };
    let ident = apply_tiled(&s, &tiling, 1, |p, _| Ok::<_, PatchError>(p.unstack().remove(0))).map_err(e2s)?;
    let f = |v: f32| 0.5 * v * v + 0.1;
    let point = apply_tiled(&s, &tiling, 1, |p, _| {
        let m = p.unstack().remove(0);
        let data = m.data().iter().map(|&v| f(v)).collect();
        RasterMap::new(m.width(), m.height(), 3, data, ColorSpace::Srgb, MapKind::Texture)
    })
    .map_err(e2s)?;
    let di = ident
        .data()
        .iter()
        .zip(src.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let dp = point
        .data()
        .iter()
        .zip(src.data())
        .map(|(a, b)| (a - f(*b)).abs())
        .fold(0.0f32, f32::max);
    ensure(di <= 1e-6 && dp <= 1e-6, || {
        format!("identity {di:.2e}, pointwise {dp:.2e}")
    })?;
    let mut pou = 0.0f32;
    for (gw, gh, patch, stride, margin) in [(200, 136, 64, 32, 16), (1024, 512, 256, 128, 64), (97, 61, 40, 20, 7)] {
        let g = plan_grid(gw, gh, patch, stride).map_err(e2s)?;
        let one = RasterMap::filled(patch, patch, &[1.0], ColorSpace::Raw, MapKind::Generic).map_err(e2s)?;
        let out = stitch(&vec![one; g.len()], &g, margin).map_err(e2s)?;
        pou = out.data().iter().map(|v| (v - 1.0).abs()).fold(pou, f32::max);
    }
    ensure(pou <= 1e-6, || format!("partition of unity off by {pou:.2e}"))?;
    let g = plan_grid(1024, 1024, 512, 256).map_err(e2s)?;
    ensure(g.len() == 9, || format!("(1024, 512, 256) gave {} patches", g.len()))?;
    for (gw, gh, patch, stride) in [(4608, 3072, 1536, 768), (1152, 768, 384, 192), (1000, 700, 256, 128)] {
        let g = plan_grid(gw, gh, patch, stride).map_err(e2s)?;
        let cols = (g.padded_w() - patch) / stride + 1;
        let rows = (g.padded_h() - patch) / stride + 1;
        let covers = g.padded_w() >= gw && g.padded_h() >= gh;
        ensure(g.len() == cols * rows && covers, || {
            format!("{gw}×{gh}: {} patches, lattice {cols}×{rows}", g.len())
        })?;
    }
    Ok(format!(
        "identity {di:.1e}, pointwise {dp:.1e}, partition {pou:.1e}, 9 patches"
    ))
}

fn angle(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    (d / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn c7_geometry() -> Outcome {
    let mesh = assets::dome_face(24, assets::FaceFeatures::face());
    let res = (128, 96);
    let cov = UvCoverage::new(&mesh, res).map_err(e2s)?;
    let flat: Vec<f64> = shape_normals(&mesh)
        .map_err(e2s)?
        .iter()
        .flat_map(|n| [n.x, n.y, n.z])
        .collect();
    let no = rasterize_attribute(&mesh, &cov, &flat, 3, MapKind::NormalsObject, ColorSpace::SignedUnit).map_err(e2s)?;
    // detail normals: shape normals tilted by a seeded perturbation
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut data = no.data().to_vec();
    for t in data.chunks_exact_mut(3) {
        let p = Vec3::new(
            t[0] as f64 + rng.random_range(-0.4..0.4),
            t[1] as f64 + rng.random_range(-0.4..0.4),
            t[2] as f64 + rng.random_range(-0.4..0.4),
        )
        .normalize();
        t.copy_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
    }
    let detail = RasterMap::with_mask(
        res.0,
        res.1,
        3,
        data,
        ColorSpace::SignedUnit,
        MapKind::NormalsObject,
        no.mask().map(<[bool]>::to_vec),
    )
    .map_err(e2s)?;
    let frames = tangent_frames(&mesh).map_err(e2s)?;
    let field = frame_field(&mesh, &frames, &cov);
    let nt = object_to_tangent(&detail, &field).map_err(e2s)?;
    let back = tangent_to_object(&nt, &field, MapKind::NormalsObject).map_err(e2s)?;
    let worst = (0..detail.texels())
        .filter(|&i| detail.is_valid(i))
        .map(|i| angle(detail.texel(i), back.texel(i)))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-4, || format!("round trip error {worst:.2e} rad"))?;

    let planes = assets::two_planes();
    let d = depth_map(&planes, &UvCoverage::new(&planes, (16, 8)).map_err(e2s)?).map_err(e2s)?;
    let lo = d.data().iter().copied().fold(f32::MAX, f32::min);
    let hi = d.data().iter().copied().fold(f32::MIN, f32::max);
    ensure(lo == -1.0 && hi == 1.0, || format!("depth endpoints {lo}, {hi}"))?;
    let dd = depth_map(&mesh, &cov).map_err(e2s)?;
    ensure(dd.data().iter().all(|v| (-1.0..=1.0).contains(v)), || {
        "dome depth outside [-1, 1]".into()
    })?;

    let ico = assets::icosphere(3);
    let deg = ico
        .vertices()
        .iter()
        .zip(&shape_normals(&ico).map_err(e2s)?)
        .map(|(p, n)| p.normalize().dot(n).clamp(-1.0, 1.0).acos().to_degrees())
        .fold(0.0, f64::max);
    ensure(deg <= 2.0, || format!("icosphere normal {deg:.3}° off radial"))?;
    Ok(format!(
        "round trip {worst:.1e} rad, depth [{lo}, {hi}], icosphere {deg:.3}°"
    ))
}

fn c8_psnr() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for (cs, kind) in [
        (ColorSpace::Srgb, MapKind::DiffuseAlbedo),
        (ColorSpace::SignedUnit, MapKind::Generic),
    ] {
        let (lo, hi) = cs.range().unwrap();
        let (w, h) = (37, 23);
        let a: Vec<f32> = (0..w * h * 3).map(|_| rng.random_range(lo..=hi)).collect();
        let b: Vec<f32> = a
            .iter()
            .map(|&v| (v + rng.random_range(-0.05..0.05)).clamp(lo, hi))
            .collect();
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.8)).collect();
        let ma = RasterMap::new(w, h, 3, a.clone(), cs, kind).map_err(e2s)?;
        let mb = RasterMap::new(w, h, 3, b.clone(), cs, kind).map_err(e2s)?;
        let enc = |v: f32| {
            if cs == ColorSpace::SignedUnit {
                v as f64 * 0.5 + 0.5
            } else {
                v as f64
            }
        };
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..w * h {
            if mask[i] {
                for c in 0..3 {
                    sum += (enc(a[3 * i + c]) - enc(b[3 * i + c])).powi(2);
                    n += 1;
                }
            }
        }
        let oracle = 10.0 * (1.0 / (sum / n as f64)).log10();
        let got = psnr(&ma, &mb, Some(&mask)).map_err(e2s)?;
        worst = worst.max((got - oracle).abs());
    }
    ensure(worst <= 1e-9, || format!("oracle mismatch {worst:.2e} dB"))?;
    let zero = RasterMap::filled(8, 8, &[0.0], ColorSpace::Linear, MapKind::Generic).map_err(e2s)?;
    let tenth = RasterMap::filled(8, 8, &[0.1], ColorSpace::Linear, MapKind::Generic).map_err(e2s)?;
    let db = psnr(&zero, &tenth, None).map_err(e2s)?;
    // 0.1 is stored as f32; the result is exact for that stored error
    let d = 0.1f32 as f64;
    ensure(db == 10.0 * (1.0 / (d * d)).log10() && (db - 20.0).abs() < 2e-7, || {
        format!("uniform 0.1 error gave {db} dB")
    })?;
    Ok(format!("oracle mismatch {worst:.1e} dB, uniform 0.1 error {db:.7} dB"))
}

fn bin(name: &str) -> PathBuf {
    PathBuf::from(match name {
        "pipeline" => env!("CARGO_BIN_EXE_pipeline"),
        _ => env!("CARGO_BIN_EXE_refl-opchild"),
    })
}

fn pipeline(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin("pipeline")).args(args).output().map_err(e2s)?;
    if !out.status.success() {
        return Err(format!(
            "pipeline {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Writes a synthetic case and switches it to the reference ζ, so the run
/// starts from the low-resolution texture.
fn synth_case(dir: &Path, profile: &str, asset: usize) -> Result<PathBuf, String> {
    let cfg_path = PathBuf::from(
        pipeline(&[
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--profile",
            profile,
            "--seed",
            "5",
            "--asset",
            &asset.to_string(),
        ])?
        .trim(),
    );
    let mut cfg = PipelineConfig::from_json(&std::fs::read_to_string(&cfg_path).map_err(e2s)?).map_err(e2s)?;
    cfg.operators.zeta = Default::default();
    cfg.texture_hr = None;
    std::fs::write(&cfg_path, cfg.to_json()).map_err(e2s)?;
    Ok(cfg_path)
}

fn c9_determinism(work: &Path) -> Outcome {
    let cfg = synth_case(&work.join("asset0"), "desk", 0)?;
    let cfg = cfg.to_str().unwrap();
    let manifest = work.join("asset0/out/manifest.json");
    let mut seen = Vec::new();
    for threads in ["1", "1", "4"] {
        pipeline(&["--threads", threads, "run", "--config", cfg])?;
        seen.push((threads, std::fs::read(&manifest).map_err(e2s)?));
    }
    for (t, bytes) in &seen[1..] {
        ensure(*bytes == seen[0].1, || {
            format!("manifest at {t} thread(s) differs from the first run")
        })?;
    }
    Ok(format!(
        "3 runs (1, 1, 4 threads), {}-byte manifests identical",
        seen[0].1.len()
    ))
}

fn check_run(out: &Path) -> Result<usize, String> {
    let expected = [
        ("zeta/texture_hr.rmap", MapKind::Texture),
        ("geometry/normals_object.rmap", MapKind::NormalsObject),
        ("geometry/normals_tangent.rmap", MapKind::NormalsTangent),
        ("geometry/depth.rmap", MapKind::Depth),
        ("delta/diffuse_albedo.rmap", MapKind::DiffuseAlbedo),
        ("luma/gray.rmap", MapKind::Gray),
        ("psi/specular_albedo.rmap", MapKind::SpecularAlbedo),
        ("rho/normals_specular.rmap", MapKind::NormalsSpecular),
        ("sigma/normals_diffuse.rmap", MapKind::NormalsDiffuse),
        ("displacement/displacement.rmap", MapKind::Displacement),
        ("render/studio.rmap", MapKind::Generic),
        ("render/sunset.rmap", MapKind::Generic),
    ];
    let coverage = load_raster(out.join("geometry/normals_object.rmap"), MapKind::NormalsObject).map_err(e2s)?;
    let coverage: Vec<bool> = (0..coverage.texels()).map(|i| coverage.is_valid(i)).collect();
    for (rel, kind) in expected {
        let m = load_raster(out.join(rel), kind).map_err(|e| format!("{rel}: {e}"))?;
        m.validate().map_err(|e| format!("{rel}: {e}"))?;
        let want = match kind {
            MapKind::DiffuseAlbedo | MapKind::Texture | MapKind::Gray => Some(ColorSpace::Srgb),
            MapKind::SpecularAlbedo => Some(ColorSpace::Linear),
            k if k.is_normals() => Some(ColorSpace::SignedUnit),
            _ => None,
        };
        if let Some(cs) = want {
            ensure(m.colorspace() == cs, || format!("{rel}: colorspace {}", m.colorspace()))?;
        }
        if rel.starts_with("render/") {
            ensure(m.data().iter().all(|v| *v >= 0.0) && m.valid_count() > 0, || {
                format!("{rel}: negative or empty")
            })?;
        } else if !rel.starts_with("zeta/") {
            ensure(m.dims() == DESK, || format!("{rel}: {:?}", m.dims()))?;
            // every UV-space output is valid exactly where the template covers
            let valid: Vec<bool> = (0..m.texels()).map(|i| m.is_valid(i)).collect();
            ensure(valid == coverage, || {
                format!("{rel}: validity mask differs from UV coverage")
            })?;
        }
    }
    Ok(expected.len())
}

fn c10_contract_sweep(work: &Path) -> Outcome {
    let mut checked = 0;
    for asset in 0..3 {
        let dir = work.join(format!("asset{asset}"));
        if !dir.join("out/manifest.json").exists() {
            let cfg = synth_case(&dir, "desk", asset)?;
            pipeline(&["run", "--config", cfg.to_str().unwrap()])?;
        }
        checked += check_run(&dir.join("out")).map_err(|e| format!("asset {asset}: {e}"))?;
    }
    Ok(format!("{checked} maps over 3 assets satisfy their kind invariants"))
}

fn identity_contract() -> Contract {
    Contract {
        name: "identity".into(),
        input: vec!["R".into(), "G".into(), "B".into()],
        output_kind: MapKind::Texture,
        output_channels: 3,
        output_colorspace: ColorSpace::Srgb,
        scale: 1,
    }
}

fn c11_external() -> Outcome {
    let child = |mode: &[&str]| {
        let mut cmd = vec![bin("opchild").to_string_lossy().into_owned()];
        cmd.extend(mode.iter().map(|s| s.to_string()));
        ExternalOperator::new(identity_contract(), cmd, Duration::from_secs(30))
    };
    let src = assets::skin_albedo(80, 56, 2).retag(MapKind::Texture).map_err(e2s)?;
    let s = stack(vec![src.clone()]).map_err(e2s)?;
    let tiling = Tiling::new(32);
    let run = |op: &ExternalOperator| apply_tiled(&s, &tiling, 1, |p, _| op.apply(&p));
    let echo = run(&child(&["echo"])).map_err(e2s)?;
    let d = echo
        .data()
        .iter()
        .zip(src.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    ensure(d <= 1e-6, || format!("echo differs by {d:.2e}"))?;

    let origin_of = |e: PatchError| -> Result<((usize, usize), OperatorError), String> {
        match e {
            PatchError::Operator { origin, source } => match source.downcast::<OperatorError>() {
                Ok(op) => Ok((origin, *op)),
                Err(other) => Err(format!("unexpected source {other}")),
            },
            other => Err(format!("unexpected error {other}")),
        }
    };
    let mut lines = vec![format!("echo max diff {d:.1e}")];
    for (mode, want) in [
        (&["wrong-dims"][..], "protocol"),
        (&["garbage"][..], "protocol"),
        (&["crash"][..], "crash"),
    ] {
        let err = run(&child(mode))
            .err()
            .ok_or_else(|| format!("{} child succeeded", mode[0]))?;
        let (origin, op) = origin_of(err)?;
        let ok = match (&op, want) {
            (OperatorError::Protocol { .. }, "protocol") => true,
            (OperatorError::Crash { status, .. }, "crash") => status.contains("3"),
            _ => false,
        };
        ensure(ok && origin == (0, 0), || format!("{}: {op} at {origin:?}", mode[0]))?;
        lines.push(format!("{} → {want} at {origin:?}", mode[0]));
    }
    Ok(lines.join(", "))
}

fn c12_full_resolution(work: &Path) -> Outcome {
    let dir = work.join("full");
    let cfg = synth_case(&dir, "full", 1)?;
    let out = pipeline(&["run", "--config", cfg.to_str().unwrap()])?;
    let peak: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("peak_rss_mb: "))
        .ok_or("no peak memory report")?
        .parse()
        .map_err(e2s)?;
    ensure(peak <= 16384.0, || format!("peak resident memory {peak:.0} MB"))?;
    let t = load_raster(dir.join("texture.rmap"), MapKind::Texture).map_err(e2s)?;
    ensure(t.dims() == (576, 384), || format!("input texture {:?}", t.dims()))?;
    for (rel, kind) in [
        ("delta/diffuse_albedo.rmap", MapKind::DiffuseAlbedo),
        ("psi/specular_albedo.rmap", MapKind::SpecularAlbedo),
        ("rho/normals_specular.rmap", MapKind::NormalsSpecular),
        ("sigma/normals_diffuse.rmap", MapKind::NormalsDiffuse),
        ("displacement/displacement.rmap", MapKind::Displacement),
    ] {
        let m = load_raster(dir.join("out").join(rel), kind).map_err(e2s)?;
        ensure(m.dims() == (4608, 3072), || format!("{rel}: {:?}", m.dims()))?;
    }
    Ok(format!("576×384 → 4608×3072, peak RSS {peak:.0} MB"))
}

fn main() {
    let work = tempfile::tempdir().expect("scratch directory");
    let work = work.path();
    let mut studio = Vec::new();
    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let mut failed = 0;
    let mut run = |id: usize, name: &str, check: Check| {
        let start = Instant::now();
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} ({secs:.1} s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} ({secs:.1} s)");
            }
        }
    };
    run(
        1,
        "de-light round trip",
        Box::new(|| c1_delight_round_trip(&mut studio)),
    );
    run(2, "lighting consistency", Box::new(|| c2_lighting_consistency(&studio)));
    run(3, "furnace", Box::new(c3_furnace));
    run(4, "specular lobe normalization", Box::new(c4_lobe_normalization));
    run(5, "poisson integration", Box::new(c5_poisson));
    run(6, "tiling exactness", Box::new(c6_tiling));
    run(7, "geometry conditioning", Box::new(c7_geometry));
    run(8, "psnr", Box::new(c8_psnr));
    run(9, "determinism", Box::new(|| c9_determinism(work)));
    run(10, "map-contract sweep", Box::new(|| c10_contract_sweep(work)));
    run(11, "external-operator protocol", Box::new(c11_external));
    run(12, "full-resolution smoke", Box::new(|| c12_full_resolution(work)));
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
