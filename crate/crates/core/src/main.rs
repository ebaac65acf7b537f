use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meshpose::error::Result;
use meshpose::geometry::Frame;
use meshpose::regressor::{
    config_hash, make_samples, normalization_from_samples, FeatureEncoding, RegressorModel,
    TrainConfig,
};
use meshpose::synth::{load_dataset, SampleRanges, SynthConfig};
use meshpose::{losses::LossWeights, pnp::PnPConfig};

#[derive(Parser)]
#[command(
    name = "meshpose",
    about = "Perspective face mesh reconstruction toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Std of Gaussian pixel noise stored in the landmark files.
        #[arg(long, default_value_t = 0.0)]
        sigma_px: f64,
        #[arg(long, default_value_t = 1220)]
        n_vertices: usize,
        #[arg(long, default_value_t = 8)]
        n_basis: usize,
        #[arg(long, default_value_t = 0.3)]
        depth_min: f64,
        #[arg(long, default_value_t = 0.9)]
        depth_max: f64,
        #[arg(long, default_value_t = 90.0)]
        yaw_max: f64,
        #[arg(long, default_value_t = 45.0)]
        pitch_max: f64,
        #[arg(long, default_value_t = 30.0)]
        roll_max: f64,
        #[arg(long, default_value_t = 800.0)]
        image_size: f64,
    },
    /// Score a prediction directory against a ground-truth directory.
    Score {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover a 6DoF pose from vertices + landmarks + intrinsics.
    FitPnp {
        #[arg(long)]
        vertices: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project world-space vertices to pixels.
    Project {
        #[arg(long)]
        vertices: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the joint mesh+landmark regressor on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 64)]
        feature_count: usize,
        #[arg(long, default_value_t = 1.0)]
        feature_noise: f64,
        #[arg(long, default_value_t = 0.25)]
        lambda0: f64,
        #[arg(long, default_value_t = 2.0)]
        lambda1: f64,
    },
    /// Run a trained model over a dataset and write scoreable predictions.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Pixel noise applied to the input features (0 = clean).
        #[arg(long, default_value_t = 1.0)]
        feature_noise: f64,
    },
    /// Verify every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Export a mesh as Wavefront OBJ.
    ExportObj {
        #[arg(long)]
        vertices: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth {
            n,
            seed,
            out,
            sigma_px,
            n_vertices,
            n_basis,
            depth_min,
            depth_max,
            yaw_max,
            pitch_max,
            roll_max,
            image_size,
        } => {
            let config = SynthConfig {
                n_instances: n,
                seed,
                n_vertices,
                n_basis,
                sigma_px,
                ranges: SampleRanges {
                    depth_min,
                    depth_max,
                    yaw_max_deg: yaw_max,
                    pitch_max_deg: pitch_max,
                    roll_max_deg: roll_max,
                    image_size,
                },
            };
            config.ranges.validate()?;
            let (_, topo, instances) = meshpose::synth::generate_dataset(&config)?;
            meshpose::synth::write_dataset(&instances, &topo, &config, &out)?;
            eprintln!("wrote {} instances to {}", instances.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { gt_dir, pred_dir, out } => {
            let gt = meshpose::io::read_prediction_dir(&gt_dir)?;
            let pred: std::collections::BTreeMap<_, _> = meshpose::io::read_prediction_dir(&pred_dir)?
                .into_iter()
                .collect();
            let report = meshpose::score_submission(&gt, &pred)?;
            std::fs::write(&out, report.to_csv())
                .map_err(|e| meshpose::Error::io(out.display().to_string(), e))?;
            println!("mean l_error_mm {:.9}", report.mean_l_error_mm);
            Ok(ExitCode::SUCCESS)
        }
        Command::FitPnp {
            vertices,
            landmarks,
            intrinsics,
            out,
        } => {
            let v = meshpose::io::read_vertices(&vertices, Frame::World)?;
            let p = meshpose::io::read_landmarks(&landmarks)?;
            let k = meshpose::io::read_intrinsics(&intrinsics)?;
            let result = meshpose::solve_pnp(&v, &p, &k, &PnPConfig::default(), None)?;
            println!("rms_px {:.9e}", result.rms_reprojection_error);
            println!(
                "iterations {} converged {}",
                result.iterations, result.converged
            );
            if let Some(out) = out {
                meshpose::io::write_pose(&result.pose, &out)?;
            } else {
                let r = result.pose.rotation();
                let t = result.pose.translation();
                println!(
                    "R {:?} {:?} {:?}",
                    [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                    [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                    [r[(2, 0)], r[(2, 1)], r[(2, 2)]]
                );
                println!("T [{}, {}, {}]", t.x, t.y, t.z);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Project {
            vertices,
            pose,
            intrinsics,
            out,
        } => {
            let v = meshpose::io::read_vertices(&vertices, Frame::World)?;
            let pose = meshpose::io::read_pose(&pose)?;
            let k = meshpose::io::read_intrinsics(&intrinsics)?;
            let p = meshpose::project_world(&v, &pose, &k)?;
            meshpose::io::write_landmarks(&p, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            data,
            out,
            epochs,
            lr,
            batch,
            seed,
            hidden,
            feature_count,
            feature_noise,
            lambda0,
            lambda1,
        } => {
            let (topo, instances) = load_dataset(&data)?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size: batch,
                seed,
                hidden,
                feature_count,
                feature_noise_px: feature_noise,
                weights: LossWeights::new(lambda0, lambda1)?,
                ..Default::default()
            };
            let image_size = instances
                .first()
                .map(|i| 2.0 * i.k.cx)
                .unwrap_or(800.0);
            let encoding =
                FeatureEncoding::even_subset(topo.n_vertices(), cfg.feature_count, image_size);
            let samples = make_samples(&instances, &encoding, cfg.feature_noise_px, cfg.seed)?;
            let norm = normalization_from_samples(&samples, image_size)?;
            let (model, curve) =
                meshpose::regressor::train(&samples, &topo.edge_table(), norm, encoding, &cfg)?;
            for (epoch, loss) in curve.iter().enumerate() {
                eprintln!("epoch {} mean_loss {:.9}", epoch + 1, loss);
            }
            model.save(&out, cfg.seed, &config_hash(&cfg))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict {
            model,
            data,
            out,
            seed,
            feature_noise,
        } => {
            let model = RegressorModel::load(&model)?;
            let (_, instances) = load_dataset(&data)?;
            let samples = make_samples(&instances, &model.encoding, feature_noise, seed)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| meshpose::Error::io(out.display().to_string(), e))?;
            for (inst, sample) in instances.iter().zip(&samples) {
                let (v, _p, result) =
                    model.predict_with_pose(&sample.features, &inst.k, &PnPConfig::default())?;
                meshpose::io::write_vertices(&v, out.join(format!("{}.vertices.json", inst.id)))?;
                meshpose::io::write_pose(&result.pose, out.join(format!("{}.pose.json", inst.id)))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { trials, seed } => {
            let report = meshpose::gradcheck::run_all(trials, seed)?;
            println!("vertex_loss max_rel_err {:.3e}", report.vertex);
            println!("edge_loss max_rel_err {:.3e}", report.edge);
            println!("landmark_loss max_rel_err {:.3e}", report.landmark);
            println!("total_loss max_rel_err {:.3e}", report.total);
            println!("regressor max_rel_err {:.3e}", report.regressor);
            if report.max() > 1e-4 {
                eprintln!("gradient check FAILED (max {:.3e})", report.max());
                return Ok(ExitCode::from(1));
            }
            println!("all gradients OK");
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportObj {
            vertices,
            topology,
            out,
        } => {
            let v = meshpose::io::read_vertices(&vertices, Frame::World)?;
            let topo = meshpose::load_topology(&topology)?;
            meshpose::export_obj(&v, &topo, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
