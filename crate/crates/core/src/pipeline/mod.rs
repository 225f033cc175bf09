//! End-to-end orchestration: load → ζ → geometry → δ → luma → ψ, ρ, σ →
//! integrate and emboss → render → evaluate.
//!
//! Every stage writes its artifacts under `output_dir/<stage>/` and records
//! their hashes in `manifest.json`. A run resumed with `from` reloads the
//! artifacts of earlier stages from disk instead of recomputing them.

pub mod config;
mod dataset;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use thiserror::Error;

pub use config::{BackendConfig, OperatorsConfig, PipelineConfig, Profile, Resolution, RigConfig, TruthConfig};
pub use dataset::{
    box_downsample, simulate_dataset, write_synthetic_case, write_synthetic_case_sized, Dataset, DatasetSample,
    SynthCase,
};
pub use manifest::{Artifact, Manifest};

use crate::color::luma_gray;
use crate::displacement::{integrate, normals_to_slopes};
use crate::mesh::{
    depth_map, emboss, frame_field, load_obj, object_to_tangent, rasterize_attribute, save_obj, shape_normals,
    subdivide, tangent_frames, Mesh, UvCoverage,
};
use crate::metrics::MetricReport;
use crate::operators::{
    run_operator, DelightDelta, DiffNormalsSigma, ExternalOperator, SpecAlbedoPsi, SpecNormalsRho, SrZeta, Stage,
    TranslationOperator,
};
use crate::patch::Tiling;
use crate::raster::{load_raster, save_raster, stack, ColorSpace, MapKind, RasterMap};
use crate::shading::{
    irradiance_components, render, ImageBuffer, IrradianceComponents, LightingRig, NormalSpace, ReflectanceSet,
};
use config::resolve;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: BoxError,
    },
    #[error("stage {stage} failed: {source}{}", last_good.as_ref().map(|p| format!(" (last good output: {})", p.display())).unwrap_or_default())]
    Stage {
        stage: &'static str,
        last_good: Option<PathBuf>,
        #[source]
        source: BoxError,
    },
    #[error("cannot resume from {stage}: {reason}")]
    Resume { stage: String, reason: String },
}

impl PipelineError {
    pub(crate) fn input(path: &Path, e: impl Into<BoxError>) -> Self {
        PipelineError::Input {
            path: path.to_path_buf(),
            source: e.into(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Stage names in execution order.
pub const STAGES: [&str; 11] = [
    "load",
    "zeta",
    "geometry",
    "delta",
    "luma",
    "psi",
    "rho",
    "sigma",
    "displacement",
    "render",
    "eval",
];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// First stage to compute; earlier stages are reloaded from disk.
    pub from: Option<String>,
}

/// Everything a run produces, also persisted under the output directory.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub timings: IndexMap<String, f64>,
    pub maps: IndexMap<String, RasterMap>,
    pub components: Option<Arc<IrradianceComponents>>,
    pub low_irradiance: Option<Vec<bool>>,
    pub embossed: Mesh,
    pub renders: IndexMap<String, ImageBuffer>,
    pub report: MetricReport,
}

impl PipelineOutputs {
    pub fn map(&self, key: &str) -> &RasterMap {
        &self.maps[key]
    }
}

/// Loads a config file and runs it; relative paths resolve against its directory.
pub fn run_config_file(path: &Path, profile: Option<Profile>, opts: &RunOptions) -> Result<PipelineOutputs> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))?;
    let mut cfg = PipelineConfig::from_json(&text)?;
    if let Some(p) = profile {
        cfg.profile = p;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_pipeline(&cfg, &base, opts)
}

fn bool_map(w: usize, h: usize, flags: &[bool]) -> RasterMap {
    let data = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    RasterMap::new(w, h, 1, data, ColorSpace::Raw, MapKind::Generic).expect("flag map")
}

fn map_flags(m: &RasterMap) -> Vec<bool> {
    m.data().iter().map(|&v| v > 0.5).collect()
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    base: &'a Path,
    out: PathBuf,
    stage: &'static str,
    manifest: Manifest,
    timings: IndexMap<String, f64>,
    maps: IndexMap<String, RasterMap>,
    mesh: Mesh,
    capture: Option<LightingRig>,
    components: Option<Arc<IrradianceComponents>>,
    low: Option<Vec<bool>>,
    embossed: Option<Mesh>,
    renders: IndexMap<String, ImageBuffer>,
    report: MetricReport,
    last_good: Option<PathBuf>,
}

impl<'a> Run<'a> {
    fn fail(&self, e: impl Into<BoxError>) -> PipelineError {
        PipelineError::Stage {
            stage: self.stage,
            last_good: self.last_good.clone(),
            source: e.into(),
        }
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.out.join(self.stage).join(format!("{key}.{ext}"))
    }

    fn record(&mut self, key: &str, path: &Path) -> Result<()> {
        self.manifest
            .record(&self.out, self.stage, key, path)
            .map_err(|e| self.fail(e))?;
        self.last_good = Some(path.to_path_buf());
        Ok(())
    }

    fn save(&mut self, key: &str, map: RasterMap) -> Result<()> {
        let path = self.path(key, "rmap");
        save_raster(&map, &path).map_err(|e| self.fail(e))?;
        self.record(key, &path)?;
        self.maps.insert(key.to_string(), map);
        Ok(())
    }

    fn load(&mut self, key: &str, kind: MapKind) -> Result<()> {
        let path = self.path(key, "rmap");
        let map = load_raster(&path, kind).map_err(|e| PipelineError::Resume {
            stage: self.stage.to_string(),
            reason: format!("{}: {e}", path.display()),
        })?;
        self.record(key, &path)?;
        self.maps.insert(key.to_string(), map);
        Ok(())
    }

    fn get(&self, key: &str) -> &RasterMap {
        &self.maps[key]
    }

    fn operator(&self, stage: Stage) -> Result<Box<dyn TranslationOperator>> {
        let p = self.cfg.params;
        let op: Box<dyn TranslationOperator> = match self.cfg.operators.get(stage) {
            BackendConfig::External {
                command,
                timeout_s,
                whole_image,
            } => Box::new(
                ExternalOperator::new(stage.contract(), command.clone(), Duration::from_secs_f64(*timeout_s))
                    .whole_image(*whole_image),
            ),
            BackendConfig::Passthrough {} => return Err(self.fail(format!("{stage} has no passthrough backend"))),
            BackendConfig::Reference {} => match stage {
                Stage::Zeta => Box::new(SrZeta::new((!self.cfg.any_size).then(|| self.cfg.input_resolution()))),
                Stage::Delta => {
                    let comps = self
                        .components
                        .clone()
                        .ok_or_else(|| self.fail("irradiance components missing"))?;
                    Box::new(DelightDelta::new(comps, p.epsilon))
                }
                Stage::Psi => Box::new(SpecAlbedoPsi::new(p)),
                Stage::Rho => Box::new(SpecNormalsRho::new(p)),
                Stage::Sigma => Box::new(DiffNormalsSigma::new(p)),
            },
        };
        Ok(op)
    }

    fn run_op(&self, stage: Stage, layers: Vec<RasterMap>, tiling: &Tiling) -> Result<RasterMap> {
        let op = self.operator(stage)?;
        let input = stack(layers).map_err(|e| self.fail(e))?;
        run_operator(op.as_ref(), &input, tiling).map_err(|e| self.fail(e))
    }

    fn expect_dims(&self, map: &RasterMap, dims: (usize, usize), what: &str) -> Result<()> {
        if !self.cfg.any_size && map.dims() != dims {
            return Err(self.fail(format!("{what} is {:?}, the profile expects {dims:?}", map.dims())));
        }
        Ok(())
    }

    fn hr_dims(&self) -> (usize, usize) {
        self.get("texture_hr").dims()
    }

    // ---- stages ----

    fn stage_load(&mut self, compute: bool) -> Result<()> {
        let mesh_path = self.path("mesh", "obj");
        if !compute {
            if !mesh_path.exists() {
                return Err(PipelineError::Resume {
                    stage: self.stage.into(),
                    reason: format!("{} is missing", mesh_path.display()),
                });
            }
            self.record("mesh", &mesh_path)?;
            return self.load("texture", MapKind::Texture);
        }
        let path = resolve(self.base, &self.cfg.texture);
        let t = load_raster(&path, MapKind::Texture).map_err(|e| PipelineError::input(&path, e))?;
        if !matches!(self.cfg.operators.zeta, BackendConfig::Passthrough {}) {
            self.expect_dims(&t, self.cfg.input_resolution(), "texture")?;
        }
        save_obj(&self.mesh, &mesh_path).map_err(|e| self.fail(e))?;
        self.record("mesh", &mesh_path)?;
        self.save("texture", t)
    }

    fn stage_zeta(&mut self, compute: bool) -> Result<()> {
        if !compute {
            return self.load("texture_hr", MapKind::Texture);
        }
        let hr = match &self.cfg.operators.zeta {
            BackendConfig::Passthrough {} => {
                let p = resolve(self.base, self.cfg.texture_hr.as_ref().unwrap_or(&self.cfg.texture));
                let t = load_raster(&p, MapKind::Texture).map_err(|e| PipelineError::input(&p, e))?;
                self.expect_dims(&t, self.cfg.output_resolution(), "texture_hr")?;
                t
            }
            _ => {
                // patches at input scale so outputs land on the output lattice
                let t = self.cfg.tiling();
                let k = Stage::Zeta.contract().scale;
                let tiling = Tiling {
                    patch: (t.patch / k).max(1),
                    stride: Some((t.stride() / k).max(1)),
                    blend: t.blend.map(|b| b / k),
                };
                self.run_op(Stage::Zeta, vec![self.get("texture").clone()], &tiling)?
            }
        };
        self.save("texture_hr", hr)
    }

    fn stage_geometry(&mut self, compute: bool) -> Result<()> {
        if !compute {
            self.load("normals_object", MapKind::NormalsObject)?;
            self.load("normals_tangent", MapKind::NormalsTangent)?;
            return self.load("depth", MapKind::Depth);
        }
        let dims = self.hr_dims();
        let mesh = &self.mesh;
        let cov = UvCoverage::new(mesh, dims).map_err(|e| self.fail(e))?;
        let normals: Vec<f64> = shape_normals(mesh)
            .map_err(|e| self.fail(e))?
            .iter()
            .flat_map(|n| [n.x, n.y, n.z])
            .collect();
        let no = rasterize_attribute(mesh, &cov, &normals, 3, MapKind::NormalsObject, ColorSpace::SignedUnit)
            .map_err(|e| self.fail(e))?;
        let frames = tangent_frames(mesh).map_err(|e| self.fail(e))?;
        let field = frame_field(mesh, &frames, &cov);
        let nt = object_to_tangent(&no, &field).map_err(|e| self.fail(e))?;
        let d = depth_map(mesh, &cov).map_err(|e| self.fail(e))?;
        self.save("normals_object", no)?;
        self.save("normals_tangent", nt)?;
        self.save("depth", d)
    }

    fn reference_delta(&self) -> bool {
        matches!(self.cfg.operators.delta, BackendConfig::Reference {})
    }

    fn stage_delta(&mut self, compute: bool) -> Result<()> {
        if !compute {
            if self.reference_delta() {
                self.load("irradiance", MapKind::Irradiance)?;
                self.load("specular_addend", MapKind::Irradiance)?;
                self.load("shadowed", MapKind::Generic)?;
                self.load("low_irradiance", MapKind::Generic)?;
                let comps = IrradianceComponents {
                    irradiance: self.get("irradiance").clone(),
                    specular: self.get("specular_addend").clone(),
                    shadowed: map_flags(self.get("shadowed")),
                };
                self.components = Some(Arc::new(comps));
                self.low = Some(map_flags(self.get("low_irradiance")));
            }
            return self.load("diffuse_albedo", MapKind::DiffuseAlbedo);
        }
        let layers = vec![self.get("texture_hr").clone(), self.get("depth").clone()];
        if !self.reference_delta() {
            let a = self.run_op(Stage::Delta, layers, &self.cfg.tiling())?;
            return self.save("diffuse_albedo", a);
        }
        let rig = self
            .capture
            .as_ref()
            .ok_or_else(|| self.fail(crate::operators::OperatorError::MissingRig))?;
        let (w, h) = self.hr_dims();
        let comps = irradiance_components(&self.mesh, rig, &self.cfg.shading(), (w, h)).map_err(|e| self.fail(e))?;
        let comps = Arc::new(comps);
        self.components = Some(comps.clone());
        let op = DelightDelta::new(comps.clone(), self.cfg.params.epsilon);
        let input = stack(layers).map_err(|e| self.fail(e))?;
        let delit = op.delight(&input).map_err(|e| self.fail(e))?;
        self.save("irradiance", comps.irradiance.clone())?;
        self.save("specular_addend", comps.specular.clone())?;
        self.save("shadowed", bool_map(w, h, &comps.shadowed))?;
        self.save("low_irradiance", bool_map(w, h, &delit.low_irradiance))?;
        self.low = Some(delit.low_irradiance);
        self.save("diffuse_albedo", delit.albedo)
    }

    fn stage_luma(&mut self, compute: bool) -> Result<()> {
        if !compute {
            return self.load("gray", MapKind::Gray);
        }
        let g = luma_gray(self.get("diffuse_albedo")).map_err(|e| self.fail(e))?;
        self.save("gray", g)
    }

    fn stage_translate(&mut self, stage: Stage, compute: bool) -> Result<()> {
        let (key, kind, inputs): (&str, MapKind, &[&str]) = match stage {
            Stage::Psi => ("specular_albedo", MapKind::SpecularAlbedo, &["diffuse_albedo"]),
            Stage::Rho => (
                "normals_specular",
                MapKind::NormalsSpecular,
                &["gray", "normals_tangent"],
            ),
            Stage::Sigma => ("normals_diffuse", MapKind::NormalsDiffuse, &["gray", "normals_object"]),
            _ => unreachable!("not a detail stage"),
        };
        if !compute {
            return self.load(key, kind);
        }
        let layers = inputs.iter().map(|k| self.get(k).clone()).collect();
        let out = self.run_op(stage, layers, &self.cfg.tiling())?;
        self.save(key, out)
    }

    fn stage_displacement(&mut self, compute: bool) -> Result<()> {
        let obj = self.path("embossed", "obj");
        if !compute {
            self.load("displacement", MapKind::Displacement)?;
            self.embossed = Some(load_obj(&obj).map_err(|e| PipelineError::Resume {
                stage: self.stage.into(),
                reason: e.to_string(),
            })?);
            return self.record("embossed", &obj);
        }
        let slopes = normals_to_slopes(self.get("normals_specular")).map_err(|e| self.fail(e))?;
        let solved = integrate(&slopes).map_err(|e| self.fail(e))?;
        self.report.flags.push(format!(
            "integration: {} iterations, relative residual {:.3e}, {} components",
            solved.iterations, solved.relative_residual, solved.components
        ));
        let fine = subdivide(&self.mesh, self.cfg.subdivision_levels);
        let embossed = emboss(&fine, &solved.displacement, self.cfg.emboss_scale).map_err(|e| self.fail(e))?;
        self.save("displacement", solved.displacement)?;
        save_obj(&embossed.mesh, &obj).map_err(|e| self.fail(e))?;
        self.record("embossed", &obj)?;
        self.embossed = Some(embossed.mesh);
        Ok(())
    }

    fn stage_render(&mut self) -> Result<()> {
        let refl = ReflectanceSet {
            diffuse_albedo: self.get("diffuse_albedo").clone(),
            specular_albedo: self.get("specular_albedo").clone(),
            diffuse_normals: self.get("normals_diffuse").clone(),
            diffuse_space: NormalSpace::Object,
            specular_normals: self.get("normals_specular").clone(),
            displacement: Some(self.get("displacement").clone()),
        };
        let mut rigs: Vec<(String, LightingRig)> = Vec::new();
        for (name, rc) in &self.cfg.render_rigs {
            rigs.push((name.clone(), rc.load(self.base, self.cfg.seed)?));
        }
        if rigs.is_empty() {
            if let Some(r) = &self.capture {
                rigs.push(("capture".into(), r.clone()));
            }
        }
        let mesh = self.embossed.clone().expect("displacement stage ran");
        let camera = self.cfg.camera();
        let params = self.cfg.shading();
        for (name, rig) in rigs {
            let img = render(&mesh, &refl, &camera, &rig, &params).map_err(|e| self.fail(e))?;
            let raw = img.to_raster().map_err(|e| self.fail(e))?;
            let path = self.path(&name, "rmap");
            save_raster(&raw, &path).map_err(|e| self.fail(e))?;
            self.record(&name, &path)?;
            let png = self.path(&name, "png");
            save_raster(&img.srgb_preview().map_err(|e| self.fail(e))?, &png).map_err(|e| self.fail(e))?;
            self.record(&format!("{name}.preview"), &png)?;
            if img.degenerate > 0 {
                self.report
                    .flags
                    .push(format!("render {name}: {} back-face pixels", img.degenerate));
            }
            self.renders.insert(name, img);
        }
        Ok(())
    }

    fn stage_eval(&mut self) -> Result<()> {
        let truth = &self.cfg.truth;
        let low = self.low.clone();
        let entries: [(&str, &Option<PathBuf>, MapKind); 4] = [
            ("diffuse_albedo", &truth.diffuse_albedo, MapKind::DiffuseAlbedo),
            ("specular_albedo", &truth.specular_albedo, MapKind::SpecularAlbedo),
            ("normals_specular", &truth.normals_specular, MapKind::NormalsSpecular),
            ("normals_diffuse", &truth.normals_diffuse, MapKind::NormalsDiffuse),
        ];
        for (key, path, kind) in entries {
            let Some(p) = path else { continue };
            let p = resolve(self.base, p);
            let t = load_raster(&p, kind).map_err(|e| PipelineError::input(&p, e))?;
            // low-irradiance texels are fills, not estimates
            let mask: Option<Vec<bool>> = low.as_ref().map(|l| l.iter().map(|&v| !v).collect());
            let out = self.get(key).clone();
            self.report
                .add(key, &out, &t, mask.as_deref())
                .map_err(|e| self.fail(e))?;
        }
        if let Some(l) = &low {
            let n = l.iter().filter(|&&v| v).count();
            if n > 0 {
                self.report
                    .flags
                    .push(format!("delta: {n} low-irradiance texels filled"));
            }
        }
        let path = self.out.join("eval").join("metrics.json");
        std::fs::write(&path, self.report.to_json()).map_err(|e| self.fail(e))?;
        self.record("metrics", &path)
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.out.join("manifest.json");
        std::fs::write(&path, self.manifest.to_json()).map_err(|e| self.fail(e))?;
        let t = serde_json::to_string_pretty(&self.timings).expect("timings serialize") + "\n";
        std::fs::write(self.out.join("timings.json"), t).map_err(|e| self.fail(e))
    }
}

/// Runs the pipeline with relative paths resolved against `base`.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, opts: &RunOptions) -> Result<PipelineOutputs> {
    cfg.validate(base)?;
    let start = match &opts.from {
        Some(s) => STAGES
            .iter()
            .position(|n| n == s)
            .ok_or_else(|| PipelineError::Resume {
                stage: s.clone(),
                reason: format!("unknown stage; expected one of {}", STAGES.join(", ")),
            })?,
        None => 0,
    };
    let out = resolve(base, &cfg.output_dir);
    for s in STAGES {
        std::fs::create_dir_all(out.join(s)).map_err(|e| PipelineError::input(&out, e))?;
    }
    let mesh_path = resolve(base, &cfg.mesh);
    let mesh = load_obj(&mesh_path).map_err(|e| PipelineError::input(&mesh_path, e))?;
    let capture = cfg.rig.as_ref().map(|r| r.load(base, cfg.seed)).transpose()?;
    let mut run = Run {
        cfg,
        base,
        out,
        stage: STAGES[0],
        manifest: Manifest::default(),
        timings: IndexMap::new(),
        maps: IndexMap::new(),
        mesh,
        capture,
        components: None,
        low: None,
        embossed: None,
        renders: IndexMap::new(),
        report: MetricReport::default(),
        last_good: None,
    };
    for (k, name) in STAGES.iter().enumerate() {
        run.stage = *name;
        let compute = k >= start;
        let t0 = Instant::now();
        match *name {
            "load" => run.stage_load(compute)?,
            "zeta" => run.stage_zeta(compute)?,
            "geometry" => run.stage_geometry(compute)?,
            "delta" => run.stage_delta(compute)?,
            "luma" => run.stage_luma(compute)?,
            "psi" => run.stage_translate(Stage::Psi, compute)?,
            "rho" => run.stage_translate(Stage::Rho, compute)?,
            "sigma" => run.stage_translate(Stage::Sigma, compute)?,
            "displacement" => run.stage_displacement(compute)?,
            // renders and metrics are leaves; they always run
            "render" => run.stage_render()?,
            "eval" => run.stage_eval()?,
            _ => unreachable!(),
        }
        if compute {
            run.timings.insert(name.to_string(), t0.elapsed().as_secs_f64());
        }
        log::info!("stage {name} done in {:.2?}", t0.elapsed());
        run.write_manifest()?;
    }
    Ok(PipelineOutputs {
        output_dir: run.out.clone(),
        manifest: run.manifest,
        timings: run.timings,
        maps: run.maps,
        components: run.components,
        low_irradiance: run.low,
        embossed: run.embossed.expect("displacement stage ran"),
        renders: run.renders,
        report: run.report,
    })
}
