//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal/check failure, 2 usage or validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use microtracer::container::write_shot;
use microtracer::furnace::furnace_check;
use microtracer::render::render_shot;
use microtracer::scene::parse_scene;
use microtracer::trace::MAX_VERTICES;

#[derive(Parser)]
#[command(name = "microtracer", about = "tiny deterministic CPU path tracer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene file into a shot container directory.
    Render(RenderArgs),
    /// Run the emissive-cavity energy check against its closed form.
    Furnace(FurnaceArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description file
    #[arg(long)]
    scene: PathBuf,
    /// Output container directory
    #[arg(long)]
    out: PathBuf,
    /// Samples per pixel for the noisy image
    #[arg(long)]
    spp: usize,
    /// Samples per pixel for the reference (>= spp)
    #[arg(long = "ref-spp")]
    ref_spp: usize,
    /// Resolution as WIDTHxHEIGHT, e.g. 64x64
    #[arg(long, value_parser = parse_res)]
    res: (usize, usize),
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FurnaceArgs {
    /// Wall reflectance in [0, 1)
    #[arg(long)]
    albedo: f64,
    /// Wall emission level
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long, default_value_t = 16384)]
    spp: usize,
    #[arg(long, default_value_t = 16)]
    res: usize,
    /// Relative tolerance on the mean
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

fn run_render(args: RenderArgs) -> ExitCode {
    if args.spp < 1 || args.ref_spp < args.spp {
        eprintln!("error: need spp >= 1 and ref-spp >= spp");
        return ExitCode::from(2);
    }
    let text = match std::fs::read_to_string(&args.scene) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.scene.display());
            return ExitCode::from(2);
        }
    };
    let scene = match parse_scene(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.scene.display());
            return ExitCode::from(2);
        }
    };
    let scene_id = args
        .scene
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    let (w, h) = args.res;
    let shot = render_shot(&scene, w, h, args.spp, args.ref_spp, args.seed, &scene_id);
    if let Err(e) = write_shot(&args.out, &shot) {
        eprintln!("error: writing {}: {e}", args.out.display());
        return ExitCode::from(1);
    }
    eprintln!(
        "wrote {}x{} shot (spp {}, ref {}) to {}",
        w,
        h,
        args.spp,
        args.ref_spp,
        args.out.display()
    );
    ExitCode::SUCCESS
}

fn run_furnace(args: FurnaceArgs) -> ExitCode {
    if !(0.0..1.0).contains(&args.albedo) {
        eprintln!("error: albedo must be in [0, 1)");
        return ExitCode::from(2);
    }
    let rep = furnace_check(args.albedo, args.level, args.spp, args.res, args.tolerance);
    println!(
        "furnace rho={} level={} spp={} res={}x{}",
        rep.rho, rep.level, rep.spp, rep.resolution, rep.resolution
    );
    println!("expected {:.9}", rep.expected);
    println!("measured {:.9}", rep.measured);
    println!("rel_error {:.3e} (3-sigma band {:.3e})", rep.rel_error, rep.band_3sigma);
    println!("bounce  measured      expected");
    for i in 0..MAX_VERTICES {
        println!("{i:>6}  {:<12.9}  {:<12.9}", rep.by_bounce[i], rep.by_bounce_expected[i]);
    }
    if rep.passed {
        println!("PASS (tolerance {:.3e})", args.tolerance);
        ExitCode::SUCCESS
    } else {
        println!("FAIL (tolerance {:.3e})", args.tolerance);
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Render(args) => run_render(args),
        Command::Furnace(args) => run_furnace(args),
    }
}
