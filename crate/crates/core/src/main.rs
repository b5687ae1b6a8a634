use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edgereg::imaging::{canny, encode_pgm8, read_pnm, CannyParams};
use edgereg::io::write_atomic;
use edgereg::pipeline::{run_bench, run_register, write_case, PipelineError, REGISTER_OUTPUTS};
use edgereg::synthetic_bench::{generate_case, NoiseModel, SceneSpec};

#[derive(Parser)]
#[command(name = "edgereg", version, about = "Edge-driven LiDAR to camera pose refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine the pose described by a config file and write reports and overlays.
    Register { config: PathBuf },
    /// Run the synthetic perturbation sweep described by a config file.
    Bench { config: PathBuf },
    /// Generate one ground-truth case directory from a scene file
    /// (`builtin:corridor` selects the built-in corridor).
    Synth {
        scene: String,
        outdir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        rot_deg: f64,
        #[arg(long, default_value_t = 0.05)]
        trans_m: f64,
        #[arg(long, default_value_t = 0.0)]
        range_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        image_noise: f64,
    },
    /// Run the edge detector alone and write the edge map as a PGM.
    Canny {
        image: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        low: f64,
        #[arg(long, default_value_t = 3.0)]
        ratio: f64,
        #[arg(long, default_value_t = 3)]
        aperture: usize,
    },
}

fn load_scene(arg: &str) -> Result<SceneSpec, PipelineError> {
    match arg.strip_prefix("builtin:") {
        Some("corridor") => Ok(SceneSpec::corridor(0)),
        Some(other) => Err(PipelineError::Usage(format!("unknown built-in scene {other:?}"))),
        None => Ok(SceneSpec::load(Path::new(arg))?),
    }
}

fn run(cli: Cli) -> Result<u8, PipelineError> {
    match cli.command {
        Command::Register { config } => {
            let (code, report) = run_register(&config)?;
            for it in &report.history {
                println!("{it}");
            }
            println!(
                "{}: {} after {} iterations, cost {:.4e} -> {:.4e}, {} active / {} features",
                if report.converged { "converged" } else { "not converged" },
                report.termination,
                report.iterations,
                report.initial_cost,
                report.final_cost,
                report.active_residuals,
                report.total_features
            );
            println!("wrote {}", REGISTER_OUTPUTS.join(", "));
            Ok(code)
        }
        Command::Bench { config } => {
            let (path, rows) = run_bench(&config)?;
            let converged = rows.iter().filter(|r| r.converged).count();
            println!("{} cases, {} converged, wrote {}", rows.len(), converged, path.display());
            Ok(0)
        }
        Command::Synth {
            scene,
            outdir,
            seed,
            rot_deg,
            trans_m,
            range_noise,
            image_noise,
        } => {
            let spec = load_scene(&scene)?;
            let noise = NoiseModel {
                range_sigma: range_noise,
                image_sigma: image_noise,
            };
            let case = generate_case(&spec, seed, rot_deg, trans_m, &noise);
            write_case(&outdir, &spec, &case)?;
            println!("wrote case {seed} to {}", outdir.display());
            Ok(0)
        }
        Command::Canny {
            image,
            out,
            low,
            ratio,
            aperture,
        } => {
            let img = read_pnm(&image)?.to_gray();
            let params = CannyParams {
                low_threshold: low,
                ratio,
                aperture,
            };
            let edges = canny(&img, &params)?;
            let bytes: Vec<u8> = edges.grid().iter().map(|e| if *e { 255 } else { 0 }).collect();
            write_atomic(&out, &encode_pgm8(edges.width(), edges.height(), &bytes)).map_err(|source| {
                PipelineError::Io {
                    path: out.display().to_string(),
                    source,
                }
            })?;
            println!("{} edge pixels", edges.len());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
