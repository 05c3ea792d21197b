use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{error, info};

use liorecon::pipeline::eval::{self, efficiency_factors, efficiency_table, parse_detail_table};
use liorecon::pipeline::simulate::read_world;
use liorecon::pipeline::{
    load_odometry_output, run_odometry, run_reconstruction, simulate, write_dataset, write_mesh, write_odometry,
    Dataset, RunConfig, TrajectoryEstimate,
};
use liorecon::tsdf::read_ply;
use liorecon::Result;

#[derive(Parser)]
#[command(name = "liorecon", version, about = "LiDAR-inertial odometry and TSDF reconstruction")]
struct Cli {
    /// `key = value` configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-cast a world along a trajectory into a scan + IMU dataset.
    Simulate,
    /// Estimate the keyframe trajectory and deskewed clouds of a dataset.
    Odometry {
        /// Dataset directory holding `scans.csv` and `imu.csv`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Fuse odometry clouds into a TSDF and write `mesh.ply`.
    Reconstruct {
        /// Odometry output directory (`trajectory.tum`, `clouds/`).
        #[arg(long)]
        input: PathBuf,
        /// Use this trajectory instead of `<input>/trajectory.tum`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Trajectory error against ground truth, optionally mesh accuracy.
    Evaluate {
        /// Estimated trajectory, TUM format.
        #[arg(long)]
        estimate: PathBuf,
        /// Reference trajectory, TUM format.
        #[arg(long)]
        ground_truth: PathBuf,
        /// Skip the rigid alignment of the estimate (and mesh) onto the
        /// ground truth.
        #[arg(long)]
        no_align: bool,
        /// Mesh to compare against `--world`.
        #[arg(long, requires = "world")]
        mesh: Option<PathBuf>,
        /// World facets as PLY (written by `simulate`).
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Detail/time efficiency factors of a finer setting `a` over `b`.
    Metrics {
        /// CSV `level,detail,time`, one row per setting from coarse to fine.
        #[arg(long, conflicts_with_all = ["detail_a", "detail_b", "time_a", "time_b"])]
        table: Option<PathBuf>,
        /// Detail measure of the finer setting.
        #[arg(long, requires_all = ["detail_b", "time_a", "time_b"])]
        detail_a: Option<f64>,
        /// Detail measure of the coarser setting.
        #[arg(long)]
        detail_b: Option<f64>,
        /// Run time of the finer setting.
        #[arg(long)]
        time_a: Option<f64>,
        /// Run time of the coarser setting.
        #[arg(long)]
        time_b: Option<f64>,
    },
    /// Print every configuration key with its default value.
    Defaults,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.propagate_exec();
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.output;
    let started = Instant::now();
    match &cli.command {
        Command::Simulate => {
            let data = simulate(&cfg)?;
            write_dataset(out, &data, &cfg)?;
            println!("wrote {} scans and {} IMU samples to {}", data.frames.len(), data.imu.len(), out.display());
        }
        Command::Odometry { input } => {
            let dataset = Dataset::load(input)?;
            let result = run_odometry(&dataset, &dataset.imu, &cfg)?;
            write_odometry(out, &result)?;
            println!(
                "{} keyframes, {} skipped scans, {} loop closures; wrote {}",
                result.trajectory.len(),
                result.skipped,
                result.loop_edges,
                out.display()
            );
        }
        Command::Reconstruct { input, trajectory } => {
            let (mut traj, clouds) = load_odometry_output(input)?;
            if let Some(path) = trajectory {
                traj = TrajectoryEstimate::read_tum(path)?;
            }
            let mesh = run_reconstruction(&traj, &clouds, &cfg.reconstruction, cfg.exec)?;
            std::fs::create_dir_all(out)?;
            let path = out.join("mesh.ply");
            write_mesh(&path, &mesh, &cfg.reconstruction)?;
            println!(
                "mesh with {} vertices and {} triangles; wrote {}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                path.display()
            );
        }
        Command::Evaluate {
            estimate,
            ground_truth,
            no_align,
            mesh,
            world,
        } => {
            let est = TrajectoryEstimate::read_tum(estimate)?;
            let gt = TrajectoryEstimate::read_tum(ground_truth)?;
            let ate = eval::compute_ate(&est, &gt, !no_align)?;
            println!("ate_rmse_m {ate:.6}");
            if let (Some(mesh), Some(world)) = (mesh, world) {
                let mut m = read_ply(std::io::BufReader::new(std::fs::File::open(mesh)?))?;
                if !no_align {
                    // the mesh shares the estimate's frame
                    m = eval::transform_mesh(&m, &eval::trajectory_alignment(&est, &gt)?);
                }
                let w = read_world(world)?;
                println!("mesh_to_world_hausdorff_m {:.6}", eval::mesh_to_world_distance(&m, &w, cfg.exec));
            }
        }
        Command::Metrics {
            table,
            detail_a,
            detail_b,
            time_a,
            time_b,
        } => metrics(table.as_deref(), [*detail_a, *detail_b, *time_a, *time_b])?,
        Command::Defaults => print!("{}", RunConfig::default().to_text()),
    }
    info!("done in {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn metrics(table: Option<&Path>, pair: [Option<f64>; 4]) -> Result<()> {
    if let Some(path) = table {
        let rows = parse_detail_table(&std::fs::read_to_string(path)?, path)?;
        let (factors, preferred) = efficiency_table(&rows)?;
        println!("from,to,d_increase,t_increase,e,beneficial");
        for (w, f) in rows.windows(2).zip(&factors) {
            println!(
                "{},{},{:.4},{:.4},{:.4},{}",
                w[0].level,
                w[1].level,
                f.d_increase,
                f.t_increase,
                f.e,
                f.is_beneficial()
            );
        }
        println!("preferred level: {preferred}");
        return Ok(());
    }
    let [Some(da), Some(db), Some(ta), Some(tb)] = pair else {
        return Err(liorecon::Error::InvalidArgument(
            "metrics needs --table or all of --detail-a --detail-b --time-a --time-b".into(),
        ));
    };
    let f = efficiency_factors(da, db, ta, tb)?;
    println!("d_increase {:.4}", f.d_increase);
    println!("t_increase {:.4}", f.t_increase);
    println!("e {:.4} ({})", f.e, if f.is_beneficial() { "beneficial" } else { "not beneficial" });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
