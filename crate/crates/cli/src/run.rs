use std::path::Path;

use destin_core::config::RunConfig;
use destin_core::hierarchy::Execution;
use destin_core::mnist::idx::{verify_mnist_dir, FileCheck};
use destin_core::mnist::pipeline::{
    self, RunContext, Stage, ENSEMBLE_FILE, HIERARCHY_FILE, REPORT_FILE, TEST_FEATURES_FILE, TRAIN_FEATURES_FILE,
};
use destin_core::seqbench::{cell_seed, decay_slope, run_benchmark};
use destin_core::Error;
use serde::{Deserialize, Serialize};

use crate::Common;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

pub const SEQ_CSV: &str = "seqbench.csv";
pub const SEQ_SUMMARY: &str = "seqbench-summary.csv";
pub const SEQ_META: &str = "seqbench.json";
pub const MANIFEST: &str = "run.json";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Config { .. } => EXIT_CONFIG,
            Error::Divergence(_) => EXIT_DIVERGENCE,
            Error::MissingPrerequisite { .. } => EXIT_DATA,
            _ if e.is_data_error() => EXIT_DATA,
            _ => EXIT_FAILURE,
        };
        let message = match e.root() {
            root @ Error::MissingPrerequisite { .. } => root.to_string(),
            _ => e.to_string(),
        };
        Failure::new(code, message)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::new(EXIT_CONFIG, e.to_string()),
            e => e.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execution(jobs: Option<usize>) -> CliResult<Execution> {
    if jobs == Some(0) {
        return Err(Failure::new(EXIT_CONFIG, "--jobs must be >= 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    // A pool may already exist when called twice in one process; the first one wins.
    let _ = builder.build_global();
    Ok(if rayon::current_num_threads() > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    })
}

fn write(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", dir.display())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub config: RunConfig,
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_manifest(dir: &Path, cfg: &RunConfig) -> CliResult {
    let manifest = Manifest {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        config: cfg.clone(),
    };
    write(
        &dir.join(MANIFEST),
        &serde_json::to_string_pretty(&manifest).expect("manifest serialises"),
    )
}

/// Refuses to clobber existing outputs unless forced.
fn guard(dir: &Path, hash: &str, outputs: &[&str], force: bool) -> CliResult {
    if force {
        return Ok(());
    }
    let previous = read_manifest(dir).map(|m| m.config_hash);
    if let Some(prev) = &previous {
        if prev != hash {
            return Err(Failure::new(
                EXIT_CONFIG,
                format!(
                    "{} holds outputs of config {prev}, not {hash}; use another --out or pass --force",
                    dir.display()
                ),
            ));
        }
    }
    if let Some(existing) = outputs.iter().find(|name| dir.join(name).exists()) {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!(
                "{} already exists for config {hash}; pass --force to overwrite",
                dir.join(existing).display()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeqbenchMeta {
    pub config_hash: String,
    pub master_seed: u64,
    pub lengths: Vec<usize>,
    pub centroids: Vec<usize>,
    pub repetitions: usize,
    pub mean_by_length: Vec<(usize, f64)>,
    pub decay_slope: f64,
    /// `(L, K, rep, seed)` for every trial.
    pub trial_seeds: Vec<(usize, usize, usize, u64)>,
}

pub fn seqbench(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    cfg.seqbench.validate()?;
    let hash = cfg.hash();
    let exec = execution(common.jobs)?;
    let out = &common.out;
    guard(out, &hash, &[SEQ_CSV, SEQ_SUMMARY, SEQ_META], common.force)?;

    log::info!("seqbench config {hash}, seed {}", cfg.seed);
    let result = run_benchmark(&cfg.seqbench, cfg.seed, exec)?;
    let bench = &cfg.seqbench;
    let mean_by_length = result.mean_by_length();
    let mut trial_seeds = Vec::new();
    for &l in &bench.lengths {
        for &k in &bench.centroids {
            for rep in 0..bench.repetitions {
                trial_seeds.push((l, k, rep, cell_seed(cfg.seed, l, k, rep)));
            }
        }
    }
    let meta = SeqbenchMeta {
        config_hash: hash,
        master_seed: cfg.seed,
        lengths: bench.lengths.clone(),
        centroids: bench.centroids.clone(),
        repetitions: bench.repetitions,
        decay_slope: decay_slope(&mean_by_length, 1e-3),
        mean_by_length,
        trial_seeds,
    };

    create_dir(out)?;
    write_manifest(out, &cfg)?;
    write(&out.join(SEQ_CSV), &result.to_csv())?;
    write(&out.join(SEQ_SUMMARY), &result.summary_csv())?;
    write(
        &out.join(SEQ_META),
        &serde_json::to_string_pretty(&meta).expect("metadata serialises"),
    )?;

    println!("{:>3} {:>4} {:>8} {:>8}", "L", "K", "mean", "std");
    for c in result.summary() {
        println!("{:>3} {:>4} {:>8.4} {:>8.4}", c.length, c.centroids, c.mean, c.std);
    }
    println!("decay slope of ln(acc - 0.5) vs L: {:.4}", meta.decay_slope);
    println!("wrote {}", out.display());
    Ok(())
}

fn stage_outputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Hierarchy => &[HIERARCHY_FILE],
        Stage::Featurize => &[TRAIN_FEATURES_FILE, TEST_FEATURES_FILE],
        Stage::Classify => &[ENSEMBLE_FILE],
        Stage::Evaluate => &[REPORT_FILE],
        Stage::All => &[
            HIERARCHY_FILE,
            TRAIN_FEATURES_FILE,
            TEST_FEATURES_FILE,
            ENSEMBLE_FILE,
            REPORT_FILE,
        ],
    }
}

pub fn missing_data_message(dir: &Path, missing: &[&str]) -> String {
    format!(
        "MNIST files missing from {}: {}\n\
         Download the four IDX archives, for example from\n\
         \x20 https://ossci-datasets.s3.amazonaws.com/mnist/\n\
         \x20 (originally http://yann.lecun.com/exdb/mnist/)\n\
         decompress them with `gunzip *.gz` into that directory, or point\n\
         --data-dir / DESTIN_DATA_DIR at a directory that has them.\n\
         `destin verify-data` checks the files against their known digests.",
        dir.display(),
        missing.join(", ")
    )
}

pub fn mnist(common: &Common, data_dir: &Path, stage: &str, full_scale: bool) -> CliResult {
    let stage = Stage::parse(stage).ok_or_else(|| {
        Failure::new(
            EXIT_CONFIG,
            format!("unknown stage '{stage}' (expected hierarchy, featurize, classify, evaluate or all)"),
        )
    })?;
    let mut cfg = load_config(common)?;
    if full_scale {
        cfg.mnist = pipeline::PipelineConfig::full_scale();
    }
    cfg.mnist.validate()?;
    let hash = cfg.hash();
    let exec = execution(common.jobs)?;
    let out = &common.out;
    guard(out, &hash, stage_outputs(stage), common.force)?;

    if matches!(stage, Stage::Hierarchy | Stage::Featurize | Stage::All) {
        let missing: Vec<&str> = verify_mnist_dir(data_dir)
            .into_iter()
            .filter(|(_, check)| *check == FileCheck::Missing)
            .map(|(name, _)| name)
            .collect();
        if !missing.is_empty() {
            return Err(Failure::new(EXIT_DATA, missing_data_message(data_dir, &missing)));
        }
    }

    create_dir(out)?;
    write_manifest(out, &cfg)?;
    let ctx = RunContext {
        config_hash: hash.clone(),
        master_seed: cfg.seed,
    };
    log::info!("mnist config {hash}, seed {}, stage {}", cfg.seed, stage.name());
    let report = pipeline::run_pipeline(&cfg.mnist, &ctx, data_dir, out, stage, exec)?;
    if let Some(r) = report {
        println!(
            "test accuracy {:.4} on {} images (train {:.4}); {} features per image",
            r.accuracy, r.n_test, r.train_accuracy, r.feature_dim
        );
        println!("per-class accuracy:");
        for (digit, acc) in r.per_class_accuracy.iter().enumerate() {
            println!("  {digit}: {acc:.4}");
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn verify_data(dir: &Path) -> CliResult {
    let checks = verify_mnist_dir(dir);
    let mut missing = Vec::new();
    let mut bad = 0;
    for (name, check) in &checks {
        match check {
            FileCheck::Ok => println!("ok        {name}"),
            FileCheck::Missing => {
                println!("missing   {name}");
                missing.push(*name);
            }
            FileCheck::Mismatch { actual } => {
                println!("mismatch  {name} (sha256 {actual})");
                bad += 1;
            }
        }
    }
    if !missing.is_empty() {
        return Err(Failure::new(EXIT_DATA, missing_data_message(dir, &missing)));
    }
    if bad > 0 {
        return Err(Failure::new(
            EXIT_DATA,
            format!("{bad} file(s) in {} do not match the MNIST digests", dir.display()),
        ));
    }
    Ok(())
}
