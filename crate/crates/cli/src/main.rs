use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use plasmorph_core::io::{self, ProblemConfig};
use plasmorph_core::optimizer::{fit, SolveReport};
use plasmorph_core::tetmesh::{load_tetgen, write_ele, write_node};
use plasmorph_core::validation::{self, synthetic};
use plasmorph_core::{Error, MaterialParams};

#[derive(Parser)]
#[command(name = "plasmorph", version, about = "Plastic shape fitting on tetrahedral meshes")]
struct Cli {
    /// Worker threads (default: all cores). Output is reproducible for a
    /// fixed count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a plastic field to markers.
    Fit {
        /// TetGen `.node` and `.ele` files.
        #[arg(long, num_args = 2, value_names = ["NODE", "ELE"])]
        mesh: Vec<PathBuf>,
        /// JSON-lines marker file.
        #[arg(long)]
        markers: PathBuf,
        /// Material and solver settings (JSON). Defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// The object has no attachments; the rigid gauge is fixed by
        /// shape matching instead.
        #[arg(long)]
        unattached: bool,
        /// Surface mesh embedded in the rest shape, written deformed.
        #[arg(long)]
        obj: Option<PathBuf>,
    },
    /// Finite-difference checks of the energy and polar derivatives.
    CheckDerivatives {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Write a synthetic fixture with a known plastic field.
    GenSynthetic {
        /// beam, stretch, cube or blob
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Gaussian noise on ICP targets, in mm.
        #[arg(long)]
        noise_mm: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a report.json.
    Report {
        path: PathBuf,
        /// Final errors above this are flagged.
        #[arg(long, default_value_t = 1.0)]
        threshold_mm: f64,
    },
}

const DERIVATIVE_LIMIT: f64 = 1e-4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn init_threads(n: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Validation("thread count must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn cmd_fit(
    threads: Option<usize>,
    mesh: &[PathBuf],
    markers: &Path,
    config: Option<&Path>,
    out: &Path,
    unattached: bool,
    obj: Option<&Path>,
) -> anyhow::Result<()> {
    let config = match config {
        Some(p) => ProblemConfig::read(p)?,
        None => ProblemConfig::default(),
    };
    init_threads(threads.or(config.threads))?;
    let mesh = load_tetgen(&mesh[0], &mesh[1])?;
    let set = io::read_markers(markers, &mesh)?;
    if unattached && !set.attachments.is_empty() {
        return Err(Error::Validation(format!(
            "{}: --unattached given but the file has {} attachments",
            markers.display(),
            set.attachments.len()
        ))
        .into());
    }
    if !unattached && set.attachments.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no attachments; pass --unattached for a free-floating object",
            markers.display()
        ))
        .into());
    }
    info!(
        "{} vertices, {} tets; {} attachments, {} landmarks, {} icp markers",
        mesh.n_vertices(),
        mesh.n_tets(),
        set.attachments.len(),
        set.landmarks.len(),
        set.icp.len()
    );
    let result = fit(&mesh, &config.material, &set, &config.solve)?;
    let written = io::write_fit_outputs(out, &mesh, &set, &result, obj)?;
    println!("{}", io::summarize_report(&result.report, config.solve.icp_stop_mm)?);
    println!("wrote {}", written.report.display());
    Ok(())
}

fn cmd_check_derivatives(seed: u64, trials: usize) -> anyhow::Result<bool> {
    let mut blocks = validation::check_energy_derivatives(&MaterialParams::default(), seed, trials);
    blocks.extend(validation::check_polar_derivatives(seed, trials));
    let mut ok = true;
    for b in &blocks {
        let pass = b.worst_relative <= DERIVATIVE_LIMIT;
        ok &= pass;
        println!(
            "{:<24} {:>10.3e}  {}",
            b.block,
            b.worst_relative,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn cmd_gen_synthetic(preset: &str, out: &Path, noise_mm: Option<f64>, seed: Option<u64>) -> anyhow::Result<()> {
    let (mesh, mut spec) = synthetic::preset(preset).ok_or_else(|| {
        Error::Validation(format!(
            "unknown preset `{preset}`; choose one of {}",
            synthetic::PRESETS.join(", ")
        ))
    })?;
    if let Some(n) = noise_mm {
        spec.noise = n * 1e-3;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let params = MaterialParams::default();
    let case = validation::make_synthetic(&mesh, &params, &spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_node(out.join("mesh.node"), &mesh.rest_positions())?;
    write_ele(out.join("mesh.ele"), mesh.tets())?;
    write_node(out.join("ground_truth.node"), case.x())?;
    io::write_field_binary(out.join("ground_truth_field.bin"), &case.field)?;
    std::fs::write(out.join("ground_truth_field.csv"), io::field_csv(&case.field))
        .with_context(|| format!("writing into {}", out.display()))?;
    io::write_markers(out.join("markers.jsonl"), &mesh, &case.constraints)?;
    io::write_json(
        out.join("config.json"),
        &ProblemConfig {
            material: params,
            ..Default::default()
        },
    )?;
    io::write_json(out.join("case.json"), &spec)?;
    println!(
        "{preset}: {} vertices, {} tets, {} markers, {}",
        mesh.n_vertices(),
        mesh.n_tets(),
        case.constraints.icp.len(),
        if spec.attached { "attached" } else { "unattached (fit with --unattached)" }
    );
    Ok(())
}

fn cmd_report(path: &Path, threshold_mm: f64) -> anyhow::Result<()> {
    let report: SolveReport = io::read_json(path)?;
    print!("{}", io::summarize_report(&report, threshold_mm)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if !matches!(cli.command, Command::Fit { .. }) {
        init_threads(cli.threads)?;
    }
    match cli.command {
        Command::Fit {
            mesh,
            markers,
            config,
            out,
            unattached,
            obj,
        } => cmd_fit(cli.threads, &mesh, &markers, config.as_deref(), &out, unattached, obj.as_deref()).map(|_| true),
        Command::CheckDerivatives { seed, trials } => cmd_check_derivatives(seed, trials),
        Command::GenSynthetic {
            preset,
            out,
            noise_mm,
            seed,
        } => cmd_gen_synthetic(&preset, &out, noise_mm, seed).map(|_| true),
        Command::Report { path, threshold_mm } => cmd_report(&path, threshold_mm).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
