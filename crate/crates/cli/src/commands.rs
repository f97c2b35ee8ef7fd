use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hybridloc::dataset::{generate, Dataset};
use hybridloc::evaluation::{plot_script, render_report, run_sweep, TrainedEstimator};
use hybridloc::mlp::{self, Checkpoint, InputMode, TrainingSet};
use hybridloc::scene::{Point3, SceneSampler};
use serde_json::json;

use crate::config::{sweep_seed, ExperimentConfig};
use crate::CliError;

pub const DATASET_FILE: &str = "dataset.bin";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const PLOT_SCRIPT_FILE: &str = "plot_sweeps.py";
pub const REPORT_FILE: &str = "sweep_report.txt";

pub fn checkpoint_file(mode: InputMode) -> String {
    format!("checkpoint_{}.json", mode.as_str())
}

pub fn curve_file(mode: InputMode) -> String {
    format!("curve_{}.csv", mode.as_str())
}

pub fn sweep_file(var: &str) -> String {
    format!("sweep_{var}.csv")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Creates the output directory and records the resolved config in it.
fn prepare_output(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("output_dir {}: {e}", dir.display())))?;
    write(&dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    Ok(dir)
}

fn load_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset, CliError> {
    let path = dir.join(DATASET_FILE);
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "no dataset at {}; run gen-data first",
            path.display()
        )));
    }
    let ds = Dataset::load(&path).map_err(|e| io_err(&path, e))?;
    if ds.manifest != cfg.manifest() {
        return Err(CliError::Config(format!(
            "{} was generated from a different configuration; rerun gen-data",
            path.display()
        )));
    }
    Ok(ds)
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = prepare_output(cfg)?;
    let manifest = cfg.manifest();
    let ds = generate(&manifest)?;
    let path = dir.join(DATASET_FILE);
    ds.save(&path).map_err(|e| io_err(&path, e))?;
    let split = ds.split()?;
    println!("wrote {} ({} samples)", path.display(), ds.len());
    println!(
        "seed {}, {} noise configurations",
        manifest.seed,
        manifest.noise_grid.len()
    );
    println!(
        "split: {} train / {} validation / {} test",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    for (i, a) in ds.anchors.iter().enumerate() {
        println!("anchor {i}: ({:.3}, {:.3}, {:.3})", a.x, a.y, a.z);
    }
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, mode: InputMode) -> Result<(), CliError> {
    let dir = prepare_output(cfg)?;
    let ds = load_dataset(cfg, &dir)?;
    let split = ds.split()?;
    let dim = mode.input_dim(ds.anchor_count());
    let (x, y) = ds.design_matrix(mode, &split.train);
    let (vx, vy) = ds.design_matrix(mode, &split.val);
    let train_set = TrainingSet::new(&x, &y, dim)?;
    let val_set = TrainingSet::new(&vx, &vy, dim)?;
    let tc = cfg.train_config(mode);
    let (model, curve) = mlp::train(&train_set, &val_set, &tc)?;

    let (tx, ty) = ds.design_matrix(mode, &split.test);
    let preds = model.predict(&tx)?;
    let truths: Vec<Point3<f64>> = ty.iter().map(|&t| Point3::from_array(t)).collect();
    let test_rmse = hybridloc::evaluation::rmse(&truths, &preds)?;
    let best = curve
        .iter()
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
        .expect("at least one epoch");

    let mut csv = String::from("epoch,train_mse,val_mse\n");
    for m in &curve {
        let _ = writeln!(csv, "{},{},{}", m.epoch, m.train_mse, m.val_mse);
    }
    write(&dir.join(curve_file(mode)), csv)?;

    let metadata = json!({
        "config": cfg,
        "input_mode": mode.as_str(),
        "best_epoch": best.epoch,
        "best_val_mse": best.val_mse,
        "test_rmse_m": test_rmse,
    });
    let ck = Checkpoint::from_model(&model, &ds.anchors, metadata);
    let path = dir.join(checkpoint_file(mode));
    ck.save(&path).map_err(|e| io_err(&path, e))?;
    println!(
        "{} network: best epoch {} (val mse {:.5}), test rmse {:.4} m",
        mode.as_str(),
        best.epoch,
        best.val_mse,
        test_rmse
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    let dir = prepare_output(cfg)?;
    let paths: Vec<PathBuf> = if checkpoints.is_empty() {
        [InputMode::Preprocessed, InputMode::Raw]
            .iter()
            .map(|&m| dir.join(checkpoint_file(m)))
            .filter(|p| p.exists())
            .collect()
    } else {
        checkpoints.to_vec()
    };
    let mut nets: Vec<TrainedEstimator> = Vec::new();
    for p in &paths {
        let ck = Checkpoint::load(p).map_err(|e| io_err(p, e))?;
        let net = TrainedEstimator::from_checkpoint(&ck).map_err(|e| io_err(p, e))?;
        if nets.iter().any(|n| n.method() == net.method()) {
            return Err(CliError::Usage(format!(
                "more than one {} checkpoint given",
                net.method()
            )));
        }
        nets.push(net);
    }
    let sampler = SceneSampler::new(&cfg.scene_config(), &cfg.path_loss_config())?;
    let seed = sweep_seed(cfg.seed);

    let mut report = String::new();
    let mut csvs = Vec::new();
    for spec in &cfg.sweeps {
        let result = run_sweep(spec, &sampler, &nets, seed)?;
        let name = sweep_file(spec.variable.as_str());
        let path = dir.join(&name);
        let mut bytes = Vec::new();
        result.write_csv(&mut bytes)?;
        write(&path, bytes)?;
        report.push_str(&render_report(&result));
        csvs.push(name);
    }
    let names: Vec<&str> = csvs.iter().map(String::as_str).collect();
    write(&dir.join(PLOT_SCRIPT_FILE), plot_script(&names))?;
    write(&dir.join(REPORT_FILE), &report)?;
    print!("{report}");
    Ok(())
}
