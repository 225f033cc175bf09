use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facerefl::mesh::load_obj;
use facerefl::metrics::psnr_counted;
use facerefl::pipeline::{
    run_config_file, write_synthetic_case, write_synthetic_case_sized, Profile, RigConfig, RunOptions, STAGES,
};
use facerefl::raster::{load_raster, save_raster, MapKind};
use facerefl::shading::{bake_texture, render, NormalSpace, ReflectanceSet};

#[derive(Parser)]
#[command(
    name = "pipeline",
    version,
    about = "Facial reflectance maps from a fitted mesh and texture"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a config.
    Run(RunArgs),
    /// Bake a rig's illumination into an albedo.
    Bake(BakeArgs),
    /// Render the outputs of a finished run under a rig.
    Render(RenderArgs),
    /// PSNR between two maps.
    Eval(EvalArgs),
    /// Write a synthetic case (mesh, bake, truth, config).
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    profile: Option<Profile>,
    /// First stage to recompute; earlier ones are reloaded from the output directory.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(STAGES))]
    from: Option<String>,
    /// Accept a texture of any size.
    #[arg(long)]
    any_size: bool,
}

#[derive(Args)]
struct BakeArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// sRGB diffuse albedo; the bake has its resolution.
    #[arg(long)]
    albedo: PathBuf,
    /// Rig as JSON (environment, lights, jitter_sigma, seed).
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Output directory of a finished run.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// `.rmap` keeps linear radiance; `.png` is an sRGB preview.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "generic")]
    kind: MapKind,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Index into the synthetic asset set.
    #[arg(long, default_value_t = 0)]
    asset: usize,
    /// Output resolution `WxH` instead of the profile's.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    Ok((
        w.parse().map_err(|_| "bad width")?,
        h.parse().map_err(|_| "bad height")?,
    ))
}

type BoxError = Box<dyn std::error::Error>;

fn load_rig(path: &Path, seed: u64) -> Result<facerefl::shading::LightingRig, BoxError> {
    let cfg: RigConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(cfg.load(base, seed)?)
}

fn run(args: RunArgs) -> Result<(), BoxError> {
    let opts = RunOptions { from: args.from };
    if args.any_size {
        let text = std::fs::read_to_string(&args.config)?;
        let mut cfg = facerefl::pipeline::PipelineConfig::from_json(&text)?;
        cfg.any_size = true;
        if let Some(p) = args.profile {
            cfg.profile = p;
        }
        let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
        return report(facerefl::pipeline::run_pipeline(&cfg, &base, &opts)?);
    }
    report(run_config_file(&args.config, args.profile, &opts)?)
}

fn report(out: facerefl::pipeline::PipelineOutputs) -> Result<(), BoxError> {
    for (name, e) in &out.report.entries {
        println!("{name}: {:.3} dB over {} texels", e.psnr_db, e.texels);
    }
    for f in &out.report.flags {
        println!("note: {f}");
    }
    println!("manifest: {}", out.output_dir.join("manifest.json").display());
    if let Some(kb) = peak_rss_kb() {
        println!("peak_rss_mb: {:.1}", kb as f64 / 1024.0);
    }
    Ok(())
}

/// High-water resident set size, where the platform reports it.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn bake(args: BakeArgs) -> Result<(), BoxError> {
    let mesh = load_obj(&args.mesh)?;
    let albedo = load_raster(&args.albedo, MapKind::DiffuseAlbedo)?;
    let rig = load_rig(&args.rig, args.seed)?;
    let t = bake_texture(&albedo, &mesh, &rig, &args.profile.shading())?;
    save_raster(&t, &args.out)?;
    Ok(())
}

fn render_run(args: RenderArgs) -> Result<(), BoxError> {
    let d = &args.run;
    let map = |rel: &str, kind| load_raster(d.join(rel), kind);
    let refl = ReflectanceSet {
        diffuse_albedo: map("delta/diffuse_albedo.rmap", MapKind::DiffuseAlbedo)?,
        specular_albedo: map("psi/specular_albedo.rmap", MapKind::SpecularAlbedo)?,
        diffuse_normals: map("sigma/normals_diffuse.rmap", MapKind::NormalsDiffuse)?,
        diffuse_space: NormalSpace::Object,
        specular_normals: map("rho/normals_specular.rmap", MapKind::NormalsSpecular)?,
        displacement: Some(map("displacement/displacement.rmap", MapKind::Displacement)?),
    };
    let mesh = load_obj(d.join("displacement/embossed.obj"))?;
    let rig = load_rig(&args.rig, args.seed)?;
    let img = render(&mesh, &refl, &args.profile.camera(), &rig, &args.profile.shading())?;
    let is_png = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let out = if is_png { img.srgb_preview()? } else { img.to_raster()? };
    save_raster(&out, &args.out)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), BoxError> {
    let a = load_raster(&args.a, args.kind)?;
    let b = load_raster(&args.b, args.kind)?;
    // both masks restrict the comparison
    let mask: Option<Vec<bool>> = match (a.mask(), b.mask()) {
        (None, None) => None,
        _ => Some(
            (0..a.texels().min(b.texels()))
                .map(|i| a.is_valid(i) && b.is_valid(i))
                .collect(),
        ),
    };
    let (db, n) = psnr_counted(&a, &b, mask.as_deref())?;
    println!("psnr_db {db:.6} texels {n}");
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), BoxError> {
    let case = match args.size {
        Some(size) => write_synthetic_case_sized(&args.out, args.profile, size, args.seed, args.asset)?,
        None => write_synthetic_case(&args.out, args.profile, args.seed, args.asset)?,
    };
    println!("{}", case.config_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bake(a) => bake(a),
        Command::Render(a) => render_run(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
