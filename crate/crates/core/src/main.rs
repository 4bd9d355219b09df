use clap::{Parser, Subcommand};
use coilflow::boundary::InflowWaveform;
use coilflow::error::Error;
use coilflow::geometry::demo::{build_demo_mask, generate_coil, synthetic_waveform, DemoSpec};
use coilflow::geometry::{
    packing_density, porosity_by_convolution, voxelize_coil, CoilWire, SimMode, VoxelMask,
};
use coilflow::sim::{
    run, GeometryConfig, InflowConfig, OutletConfig, RheologyConfig, RunConfig, RunOptions,
    SimConfig, Simulation,
};
use coilflow::units::{StabilityReport, UnitScales};
use std::path::PathBuf;
use std::process::ExitCode;

/// Lattice Boltzmann solver for blood flow through coiled vessel geometries.
#[derive(Parser)]
#[command(name = "coilflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file.
    Run {
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (0 = all cores). Results are identical for any count.
        #[arg(long)]
        threads: Option<usize>,
        /// Checkpoint cadence in steps (0 = off).
        #[arg(long)]
        checkpoint: Option<u64>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pre-flight checks: config, geometry, boundary coverage, stability.
    Validate { config: PathBuf },
    /// Label coil-wire voxels into a mask.
    Voxelize {
        coil_csv: PathBuf,
        mask: PathBuf,
        #[arg(long, default_value_t = 0.2e-3)]
        wire_diameter_m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the porosity field of a mask and export it as VTK.
    Porosity {
        mask: PathBuf,
        /// Averaging window; defaults to 0.6 mm (three wire diameters).
        #[arg(long, default_value_t = 0.6e-3)]
        window_m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic aneurysm demo: mask, sac region, coils,
    /// waveform and ready-to-run configs.
    DemoGeometry {
        #[arg(long)]
        out_dir: PathBuf,
        /// Grid scale: the sac spans roughly half of `size` cells.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Seed for the coil random walk.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Packing densities to generate coils for.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.15, 0.20, 0.25])]
        packing: Vec<f64>,
        /// Heartbeat period of the synthetic waveform.
        #[arg(long, default_value_t = 0.4)]
        period_s: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 usage (clap), 3 config/geometry, 4 I/O, 5 runtime blow-up.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Geometry(_) | Error::InvalidInput(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        Error::BlowUp { .. } | Error::NonConvergence { .. } => 5,
    }
}

fn dispatch(cli: Cli) -> coilflow::Result<()> {
    match cli.command {
        Command::Run { config, output_dir, threads, checkpoint, resume } => {
            let config = SimConfig::load(&config)?;
            let opts = RunOptions { output_dir, threads, checkpoint_every: checkpoint, resume };
            let report = run(&config, &opts)?;
            println!("steps executed     : {}", report.steps_executed);
            println!("wall clock         : {:.1} s", report.wall_clock_s);
            println!("peak speed         : {:.4} m/s", report.peak_speed_m_s);
            println!(
                "relaxation rate    : [{:.4}, {:.4}]",
                report.omega_min_seen, report.omega_max_seen
            );
            println!("mass drift         : {:.3e} (relative)", report.mass_drift_rel());
            println!("time series        : {}", report.series_path.display());
            println!("final fields       : {}", report.final_fields_path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let config = SimConfig::load(&config)?;
            let sim = Simulation::from_config(&config)?;
            let waveform = config.load_waveform()?;
            let (mu_lo, mu_hi) = match config.rheology.newtonian_mu_pa_s {
                Some(mu) => (mu, mu),
                None => (
                    config.rheology.carreau_yasuda.mu_inf_pa_s,
                    config.rheology.carreau_yasuda.mu0_pa_s,
                ),
            };
            let report = StabilityReport::evaluate(&config.scales, waveform.peak(), mu_lo, mu_hi);
            println!("cells              : {}", sim.domain.n_cells());
            println!("patches            : {}", sim.domain.patches.len());
            println!("wall-adjacent cells: {}", sim.domain.wall_adjacent.len());
            println!("peak lattice u     : {:.4}", report.peak_lattice_velocity);
            println!("peak Mach          : {:.4}", report.peak_mach);
            println!(
                "omega range        : [{:.4}, {:.4}]",
                report.omega_range.0, report.omega_range.1
            );
            for w in &report.warnings {
                println!("warning            : {w}");
            }
            println!("validation OK");
            Ok(())
        }
        Command::Voxelize { coil_csv, mask, wire_diameter_m, out } => {
            let wire = CoilWire::read_csv(&coil_csv, wire_diameter_m)?;
            let mask = VoxelMask::read(&mask)?;
            let outcome = voxelize_coil(&wire, &mask)?;
            println!("labeled voxels     : {}", outcome.labeled_voxels);
            if outcome.escaped_voxels > 0 {
                println!("escaped voxels     : {} (wire outside fluid!)", outcome.escaped_voxels);
            }
            outcome.mask.write(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Porosity { mask, window_m, out } => {
            let mask = VoxelMask::read(&mask)?;
            let field = porosity_by_convolution(&mask, window_m, 0.05)?;
            let porous = field.phi.iter().filter(|&&p| p < 1.0).count();
            let min_phi = field.phi.iter().cloned().fold(1.0, f64::min);
            println!("porous voxels      : {porous}");
            println!("min porosity       : {min_phi:.4}");
            write_porosity_vtk(&out, &mask, &field.phi)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::DemoGeometry { out_dir, size, seed, packing, period_s } => {
            demo_geometry(&out_dir, size, seed, &packing, period_s)
        }
    }
}

fn write_porosity_vtk(path: &PathBuf, mask: &VoxelMask, phi: &[f64]) -> coilflow::Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "coilflow porosity")?;
        writeln!(w, "BINARY")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {} {} {}", mask.dims[0], mask.dims[1], mask.dims[2])?;
        writeln!(
            w,
            "ORIGIN {:.9e} {:.9e} {:.9e}",
            mask.origin_m[0], mask.origin_m[1], mask.origin_m[2]
        )?;
        writeln!(w, "SPACING {0:.9e} {0:.9e} {0:.9e}", mask.spacing_m)?;
        writeln!(w, "POINT_DATA {}", mask.n_voxels())?;
        writeln!(w, "SCALARS porosity double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for &p in phi {
            w.write_all(&p.to_be_bytes())?;
        }
        writeln!(w)?;
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Writes the demo bundle: vessel and sac masks, coil CSVs, waveform and one
/// run config per mode/packing combination.
fn demo_geometry(
    out_dir: &PathBuf,
    size: usize,
    seed: u64,
    packings: &[f64],
    period_s: f64,
) -> coilflow::Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spec = DemoSpec {
        dims: [size, size, size * 3 / 2],
        dx_m: 50e-6 * 64.0 / size as f64,
        tube_radius_m: 0.6e-3,
        sac_radius_m: 0.9e-3,
        wire_diameter_m: 0.2e-3,
    };
    let (mask, sac) = build_demo_mask(&spec)?;
    let mask_path = out_dir.join("mask.vox");
    let sac_path = out_dir.join("sac.vox");
    mask.write(&mask_path)?;
    sac.write(&sac_path)?;
    println!("wrote {} ({} fluid-like voxels)", mask_path.display(), mask.n_voxels() - mask.count(coilflow::geometry::VoxelLabel::Solid));
    println!("wrote {}", sac_path.display());

    let waveform_path = out_dir.join("waveform.csv");
    let samples = synthetic_waveform(0.10, period_s, 64);
    InflowWaveform::write_csv(&samples, &waveform_path)?;
    println!("wrote {}", waveform_path.display());

    // time step chosen so one period is an integer number of steps and the
    // peak lattice velocity stays below 0.1
    let dt_s = period_s / (period_s / 1.25e-5).round();
    let scales = UnitScales { dx_m: spec.dx_m, dt_s, rho0_kg_m3: 1060.0 };

    let write_config = |name: &str,
                        mode: SimMode,
                        coil: Option<PathBuf>|
     -> coilflow::Result<PathBuf> {
        let config = SimConfig {
            mode,
            threads: 0,
            scales,
            rheology: RheologyConfig::default(),
            porous: Default::default(),
            inflow: InflowConfig {
                waveform_csv: Some(PathBuf::from("waveform.csv")),
                constant_m_s: None,
                period_s,
                ramp_steps: 1500,
                ramp_shape: Default::default(),
            },
            geometry: GeometryConfig {
                mask: PathBuf::from("mask.vox"),
                coil_csv: coil,
                wire_diameter_m: spec.wire_diameter_m,
                porosity_window_m: None,
                region_mask: Some(PathBuf::from("sac.vox")),
            },
            outlet: OutletConfig::default(),
            run: RunConfig {
                output_dir: PathBuf::from(format!("out_{name}")),
                ..Default::default()
            },
        };
        let path = out_dir.join(format!("run_{name}.toml"));
        config.save(&path)?;
        Ok(path)
    };

    write_config("uncoiled", SimMode::VolumeAveraged, None)?;
    for &p in packings {
        let tag = format!("p{:02}", (p * 100.0).round() as u64);
        let wire = generate_coil(&spec, &sac, p, seed)?;
        let coil_path = out_dir.join(format!("coil_{tag}.csv"));
        wire.write_csv(&coil_path)?;
        let density = packing_density(&wire, &sac)?;
        println!("wrote {} (packing density {:.3})", coil_path.display(), density);
        write_config(&format!("va_{tag}"), SimMode::VolumeAveraged, Some(PathBuf::from(format!("coil_{tag}.csv"))))?;
        write_config(&format!("fr_{tag}"), SimMode::FullyResolved, Some(PathBuf::from(format!("coil_{tag}.csv"))))?;
    }
    println!("demo bundle ready under {}", out_dir.display());
    Ok(())
}
