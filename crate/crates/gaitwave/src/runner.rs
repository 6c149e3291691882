//! Executes an experiment config as independent (config, band, seed) jobs.
//!
//! Each finished job is written to `jobs/<hash>.json`, where the hash is a
//! SHA-256 digest of the job's canonical JSON key. `--resume` reuses those
//! files, so a restarted run only trains what is missing.

use std::fs;
use std::path::{Path, PathBuf};

use gaitwave_core::data::{Band, SplitAssignment};
use gaitwave_core::experiments::{
    aggregate, assemble_curve, assemble_rows, curve_split, prepare_band, resolve_config, AggregateSummary, BandData,
    BandSetting, ComparisonRow, CurvePoint, Job, Scope,
};
use gaitwave_core::models::ModelConfig;
use gaitwave_core::train::{train, RunRecord, TrainData, TrainSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::save_checkpoint;
use crate::config::{DatasetSource, ExperimentConfig, SplitConfig};
use crate::error::{CliError, Result};
use crate::format::{load_band, load_manifest, BandRecordings, MANIFEST_FILE};
use crate::synth_io::write_synth;

pub const RESULTS_FILE: &str = "results.json";
pub const JOBS_DIR: &str = "jobs";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Comparison,
    Curve,
}

/// Everything that determines a job's outcome. Serialized field order is
/// fixed by the struct, which makes the JSON canonical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobKey {
    pub kind: JobKind,
    pub model: ModelConfig,
    pub band: BandSetting,
    pub seed: u64,
    pub fraction: Option<f64>,
    pub window_seconds: f64,
    pub split: SplitConfig,
    /// Seed and repeat count are zeroed; the seed lives in `seed`.
    pub train: TrainSettings,
    /// Digest of the synthetic specs or of the manifest file.
    pub dataset: String,
}

impl JobKey {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("job key serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFile {
    pub key: JobKey,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub hash: String,
    pub kind: JobKind,
    /// Index into the config's model list (comparison jobs).
    pub config: Option<usize>,
    pub band: BandSetting,
    pub fraction: Option<f64>,
    pub seed: u64,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandInfo {
    pub setting: BandSetting,
    /// False when the dataset has no recordings for this band.
    pub present: bool,
    pub channels: usize,
    pub num_classes: usize,
    pub windows: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub model: String,
    pub configuration: String,
    pub band: BandSetting,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub version: u32,
    /// False when some job failed; tables then hold partial results.
    pub complete: bool,
    pub bands: Vec<BandInfo>,
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<AggregateSummary>,
    pub learning_curve: Option<CurveResult>,
    pub jobs: Vec<JobOutcome>,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub jobs: usize,
    pub resume: bool,
    pub force: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            resume: false,
            force: false,
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub results: ResultsFile,
    pub executed: usize,
    pub reused: usize,
    /// Set when a job failed; results were still written.
    pub failure: Option<CliError>,
}

struct Planned<'a> {
    key: JobKey,
    hash: String,
    config: Option<usize>,
    band_slot: usize,
    data: &'a BandData,
    split: &'a SplitAssignment,
}

fn dataset_digest(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = match &cfg.dataset {
        DatasetSource::Synth(specs) => serde_json::to_vec(specs).expect("specs serialize"),
        DatasetSource::Manifest(p) => fs::read(p).map_err(CliError::io(p))?,
    };
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

fn read_job(path: &Path) -> Result<JobFile> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Data source resolved to a manifest on disk.
fn materialize(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match &cfg.dataset {
        DatasetSource::Manifest(p) => Ok(p.clone()),
        DatasetSource::Synth(specs) => {
            let dir = cfg.output_dir.join("data");
            let (_, summary) = write_synth(specs, &dir, cfg.window_seconds, true)?;
            log::info!("generated synthetic data in {}\n{summary}", dir.display());
            Ok(dir.join(MANIFEST_FILE))
        }
    }
}

fn band_info(setting: BandSetting, data: Option<&BandData>) -> BandInfo {
    match data {
        Some(d) => BandInfo {
            setting,
            present: true,
            channels: d.channels(),
            num_classes: d.num_classes,
            windows: d.windows.len(),
            train: d.split.train.len(),
            val: d.split.val.len(),
            test: d.split.test.len(),
        },
        None => BandInfo {
            setting,
            present: false,
            channels: 0,
            num_classes: 0,
            windows: 0,
            train: 0,
            val: 0,
            test: 0,
        },
    }
}

/// Runs every job of `cfg`, writes `results.json` plus report files into
/// the output directory and returns the assembled results.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    let out = &cfg.output_dir;
    let jobs_dir = out.join(JOBS_DIR);
    let results_path = out.join(RESULTS_FILE);
    let has_jobs = jobs_dir.is_dir() && fs::read_dir(&jobs_dir).map_err(CliError::io(&jobs_dir))?.next().is_some();
    if (has_jobs || results_path.exists()) && !opts.resume && !opts.force {
        return Err(CliError::Refused(out.clone()));
    }
    if opts.force && jobs_dir.is_dir() {
        fs::remove_dir_all(&jobs_dir).map_err(CliError::io(&jobs_dir))?;
    }
    fs::create_dir_all(&jobs_dir).map_err(CliError::io(&jobs_dir))?;

    let manifest_path = materialize(cfg)?;
    let (manifest, base) = load_manifest(&manifest_path)?;
    let digest = dataset_digest(cfg)?;
    let mut loaded: Vec<(Band, BandRecordings)> = Vec::new();
    let mut prepare = |setting: BandSetting| -> Result<Option<BandData>> {
        let band = setting.kind.band();
        if !loaded.iter().any(|(b, _)| *b == band) {
            loaded.push((band, load_band(&manifest, &base, band)?));
        }
        let recs = &loaded.iter().find(|(b, _)| *b == band).expect("just loaded").1;
        if recs.labeled.is_empty() {
            log::warn!("no {} recordings; {} is reported as absent", band.as_str(), setting.kind.as_str());
            return Ok(None);
        }
        let d = prepare_band(
            setting,
            &recs.labeled,
            &recs.background,
            cfg.window_seconds,
            cfg.split.ratios,
            cfg.split.seed,
        )
        .map_err(|e| CliError::Validation(format!("{}: {e}", setting.kind.as_str())))?;
        Ok(Some(d))
    };

    let mut band_data: Vec<(BandSetting, Option<BandData>)> = Vec::new();
    if cfg.comparison {
        for &s in &cfg.bands {
            band_data.push((s, prepare(s)?));
        }
    }
    let curve_data = match &cfg.learning_curve {
        Some(c) => Some(prepare(c.band)?.ok_or_else(|| {
            CliError::Validation(format!("learning-curve band {} has no recordings", c.band.kind.as_str()))
        })?),
        None => None,
    };
    let curve_splits: Vec<SplitAssignment> = match (&cfg.learning_curve, &curve_data) {
        (Some(c), Some(d)) => c
            .fractions
            .iter()
            .map(|&f| curve_split(d, f, cfg.train.seed).map_err(|e| CliError::Validation(format!("learning curve: {e}"))))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };

    let base_train = TrainSettings {
        seed: 0,
        repeats: 0,
        ..cfg.train.clone()
    };
    let key = |kind, model: &ModelConfig, d: &BandData, seed, fraction| JobKey {
        kind,
        model: resolve_config(model, d.channels(), d.num_classes),
        band: d.setting,
        seed,
        fraction,
        window_seconds: cfg.window_seconds,
        split: cfg.split.clone(),
        train: base_train.clone(),
        dataset: digest.clone(),
    };
    let seeds: Vec<u64> = (0..cfg.train.repeats as u64).map(|i| cfg.train.seed + i).collect();
    let mut plan: Vec<Planned> = Vec::new();
    for (ci, m) in cfg.models.iter().enumerate() {
        for (bi, (_, d)) in band_data.iter().enumerate() {
            let Some(d) = d else { continue };
            for &seed in &seeds {
                let k = key(JobKind::Comparison, m, d, seed, None);
                plan.push(Planned {
                    hash: k.hash(),
                    key: k,
                    config: Some(ci),
                    band_slot: bi,
                    data: d,
                    split: &d.split,
                });
            }
        }
    }
    if let (Some(c), Some(d)) = (&cfg.learning_curve, &curve_data) {
        for (fi, &f) in c.fractions.iter().enumerate() {
            for &seed in &seeds {
                let k = key(JobKind::Curve, &c.model, d, seed, Some(f));
                plan.push(Planned {
                    hash: k.hash(),
                    key: k,
                    config: None,
                    band_slot: fi,
                    data: d,
                    split: &curve_splits[fi],
                });
            }
        }
    }

    // Reuse finished jobs on resume.
    let mut done: Vec<Option<RunRecord>> = vec![None; plan.len()];
    if opts.resume {
        for (p, slot) in plan.iter().zip(done.iter_mut()) {
            let path = jobs_dir.join(format!("{}.json", p.hash));
            if path.exists() {
                let f = read_job(&path)?;
                if f.key != p.key {
                    return Err(CliError::format(&path, "job key does not match its hash"));
                }
                *slot = Some(f.record);
            }
        }
    }
    let reused = done.iter().filter(|d| d.is_some()).count();
    let pending: Vec<usize> = (0..plan.len()).filter(|&i| done[i].is_none()).collect();
    log::info!("{} jobs planned, {} reused, {} to run", plan.len(), reused, pending.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    let total = pending.len();
    let ran: Vec<(usize, Result<RunRecord>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let p = &plan[i];
                let r = execute(p, cfg, &jobs_dir);
                match &r {
                    Ok(rec) => log::info!(
                        "job {} ({} {} seed {}) test accuracy {:.3}",
                        &p.hash[..12],
                        p.key.model.family.as_str(),
                        p.key.band.kind.as_str(),
                        p.key.seed,
                        rec.test_accuracy
                    ),
                    Err(e) => log::error!("job {} failed: {e}", &p.hash[..12]),
                }
                (i, r)
            })
            .collect()
    });
    let executed = ran.len();
    let mut errors: Vec<Option<String>> = vec![None; plan.len()];
    let mut first_failure = None;
    for (i, r) in ran {
        match r {
            Ok(rec) => done[i] = Some(rec),
            Err(e) => {
                errors[i] = Some(e.to_string());
                first_failure.get_or_insert(e);
            }
        }
    }

    let present: Vec<(usize, &BandData)> =
        band_data.iter().enumerate().filter_map(|(i, (_, d))| d.as_ref().map(|d| (i, d))).collect();
    let desc: Vec<(BandSetting, usize, usize)> =
        present.iter().map(|(_, d)| (d.setting, d.channels(), d.num_classes)).collect();
    let mut comparison: Vec<(Job, RunRecord)> = Vec::new();
    let mut curve: Vec<(usize, u64, RunRecord)> = Vec::new();
    for (p, rec) in plan.iter().zip(&done) {
        let Some(rec) = rec else { continue };
        match p.key.kind {
            JobKind::Comparison => {
                let band = present.iter().position(|(i, _)| *i == p.band_slot).expect("planned on a present band");
                let job = Job {
                    config: p.config.expect("comparison job has a config"),
                    band,
                    seed: p.key.seed,
                };
                comparison.push((job, rec.clone()));
            }
            JobKind::Curve => curve.push((p.band_slot, p.key.seed, rec.clone())),
        }
    }
    let rows = if cfg.comparison && !desc.is_empty() {
        assemble_rows(&cfg.models, &desc, &comparison)?
    } else {
        Vec::new()
    };
    let summaries = if cfg.comparison {
        Scope::ALL.iter().map(|&s| aggregate(&rows, s)).collect()
    } else {
        Vec::new()
    };
    let learning_curve = match (&cfg.learning_curve, &curve_data) {
        (Some(c), Some(d)) => {
            // Fractions with no finished seed are left out of partial results.
            let mut fr = Vec::new();
            let mut sizes = Vec::new();
            let mut recs = Vec::new();
            for (fi, &f) in c.fractions.iter().enumerate() {
                if curve.iter().any(|r| r.0 == fi) {
                    let k = fr.len();
                    fr.push(f);
                    sizes.push(curve_splits[fi].train.len());
                    recs.extend(curve.iter().filter(|r| r.0 == fi).map(|(_, s, r)| (k, *s, r.clone())));
                }
            }
            let m = resolve_config(&c.model, d.channels(), d.num_classes);
            Some(CurveResult {
                model: m.family.display_name().into(),
                configuration: m.describe(),
                band: c.band,
                points: assemble_curve(&fr, &sizes, &recs)?,
            })
        }
        _ => None,
    };
    let jobs = plan
        .iter()
        .zip(done)
        .zip(errors)
        .map(|((p, record), error)| JobOutcome {
            hash: p.hash.clone(),
            kind: p.key.kind,
            config: p.config,
            band: p.key.band,
            fraction: p.key.fraction,
            seed: p.key.seed,
            record,
            error,
        })
        .collect();
    let results = ResultsFile {
        version: RESULTS_VERSION,
        complete: first_failure.is_none(),
        bands: band_data.iter().map(|(s, d)| band_info(*s, d.as_ref())).collect(),
        rows,
        summaries,
        learning_curve,
        jobs,
    };
    write_atomic(&results_path, &results_bytes(&results))?;
    crate::report::write_reports(out, &results)?;
    let failure = first_failure.map(|e| {
        let failed = results.jobs.iter().filter(|j| j.error.is_some()).count();
        CliError::Runtime(format!("{failed} of {total} jobs failed, partial results written; first error: {e}"))
    });
    Ok(RunOutput {
        results,
        executed,
        reused,
        failure,
    })
}

pub fn results_bytes(r: &ResultsFile) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(r).expect("results serialize");
    v.push(b'\n');
    v
}

fn execute(p: &Planned, cfg: &ExperimentConfig, jobs_dir: &Path) -> Result<RunRecord> {
    let settings = TrainSettings {
        seed: p.key.seed,
        ..cfg.train.clone()
    };
    let data = TrainData {
        windows: &p.data.windows,
        split: p.split,
    };
    let (model, record) = train(&p.key.model, data, &settings)?;
    if cfg.save_checkpoints {
        let dir = cfg.output_dir.join("checkpoints");
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        save_checkpoint(&dir.join(format!("{}.ckpt", p.hash)), &model)?;
    }
    let file = JobFile {
        key: p.key.clone(),
        record: record.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&file).expect("job serializes");
    write_atomic(&jobs_dir.join(format!("{}.json", p.hash)), &bytes)?;
    Ok(record)
}
