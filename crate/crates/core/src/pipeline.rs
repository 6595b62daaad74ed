//! End-to-end runs: estimation into an output directory, synthetic
//! experiments, and validation of estimates against known truth.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::censoring::DomainConfig;
use crate::data_model::ComponentCount;
use crate::error::{Error, Result};
use crate::gibbs::{self, ChainConfig, ChainOutput, VarianceMode};
use crate::hierarchy::CovarianceStructure;
use crate::indices::SummarySpec;
use crate::inference::{cadence_label, summarize, Aggregation, PosteriorSummary, RegionKind, DEFAULT_ALPHA};
use crate::io::{
    self, file_hash, LoadedDataset, Report, RunIdentity, RunManifest, TruthFile, FORMAT_VERSION, MANIFEST_SCHEMA,
};
use crate::synth::{simulate, GeneratorConfig};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const SWEEP_FILE: &str = "sweeps.jsonl";
pub const RUNNING_MEANS_FILE: &str = "running_means.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// User-facing settings of an estimation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub alpha: f64,
    pub region: RegionKind,
    pub summaries: Vec<SummarySpec>,
    pub variance_mode: VarianceMode,
    pub covariance: CovarianceStructure,
    pub domain: DomainConfig,
    /// Convert the dataset to this many components before estimating.
    pub components: Option<ComponentCount>,
}

impl Default for RunOptions {
    fn default() -> Self {
        let chain = ChainConfig::default();
        Self {
            iterations: chain.total_sweeps,
            burn_in: chain.burn_in,
            seed: chain.seed,
            chains: chain.chains,
            alpha: DEFAULT_ALPHA,
            region: RegionKind::EqualTailed,
            summaries: chain.summaries,
            variance_mode: chain.variance_mode,
            covariance: chain.covariance,
            domain: chain.domain,
            components: None,
        }
    }
}

impl RunOptions {
    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            total_sweeps: self.iterations,
            burn_in: self.burn_in,
            seed: self.seed,
            chains: self.chains,
            summaries: self.summaries.clone(),
            variance_mode: self.variance_mode,
            covariance: self.covariance,
            domain: self.domain,
            ..ChainConfig::default()
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        Aggregation {
            burn_in: self.burn_in,
            alpha: self.alpha,
            region: self.region,
        }
    }

    pub fn identity(&self, dataset_hash: &str, components: ComponentCount) -> RunIdentity {
        let mut id = RunIdentity {
            software_version: crate::VERSION.into(),
            dataset_hash: dataset_hash.into(),
            config_hash: String::new(),
            seed: self.seed,
            components: components.len(),
            iterations: self.iterations,
            burn_in: self.burn_in,
            chains: self.chains,
            alpha: self.alpha,
            summaries: self.summaries.clone(),
            variance_mode: self.variance_mode,
            variance_cadence: cadence_label(self.variance_mode),
            region: match self.region {
                RegionKind::EqualTailed => "equal_tailed".into(),
                RegionKind::Hpd => "hpd".into(),
            },
            cap: self.domain.cap,
            floor: self.domain.floor,
            tax_threshold: self.domain.tax_threshold,
        };
        id.config_hash = id.compute_config_hash();
        id
    }
}

/// In-memory result of an estimation run.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub identity: RunIdentity,
    pub chains: Vec<ChainOutput>,
    pub summaries: Vec<PosteriorSummary>,
    pub report: Report,
}

/// Runs the sampler on an ingested dataset and summarizes the draws.
pub fn estimate(loaded: &LoadedDataset, opts: &RunOptions) -> Result<Estimate> {
    let ds = &loaded.dataset;
    let identity = opts.identity(&loaded.hash, ds.components);
    let chains = gibbs::run(ds, &opts.chain_config())?;
    let summaries = summarize(&chains, &opts.aggregation())?;
    let report = Report::new(identity.clone(), &summaries);
    Ok(Estimate {
        identity,
        chains,
        summaries,
        report,
    })
}

/// Ingests `path` under the run's domain settings and estimates.
pub fn estimate_file(path: &Path, opts: &RunOptions) -> Result<Estimate> {
    let loaded = io::ingest(path, &opts.domain, opts.components)?;
    estimate(&loaded, opts)
}

/// Writes the report, table, sweep log, running means and manifest.
pub fn write_run(dir: &Path, est: &Estimate, started_unix: u64) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    io::write_json(&est.report, &dir.join(REPORT_FILE))?;
    fs::write(dir.join(TABLE_FILE), est.report.to_table())?;
    io::write_sweep_log(&est.chains, &est.identity, &dir.join(SWEEP_FILE))?;
    io::write_running_means(&est.chains, &est.identity, &dir.join(RUNNING_MEANS_FILE))?;
    let outputs = [REPORT_FILE, TABLE_FILE, SWEEP_FILE, RUNNING_MEANS_FILE]
        .iter()
        .map(|f| Ok((f.to_string(), file_hash(&dir.join(f))?)))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        version: FORMAT_VERSION,
        run: est.identity.clone(),
        outputs,
        started_unix,
        finished_unix: io::unix_now(),
    };
    io::write_json(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Generates a synthetic experiment and writes its dataset and truth file.
pub fn simulate_to_dir(dir: &Path, config: &GeneratorConfig, seed: u64) -> Result<TruthFile> {
    let exp = simulate(config, seed)?;
    fs::create_dir_all(dir)?;
    let hash = io::write_dataset(&exp.dataset, &dir.join(DATASET_FILE))?;
    let truth = TruthFile::new(
        hash,
        seed,
        exp.population.population.len(),
        exp.dataset.len(),
        config.clone(),
        exp.population.truth.clone(),
    );
    io::write_json(&truth, &dir.join(TRUTH_FILE))?;
    Ok(truth)
}

/// One summary of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub replicate: String,
    pub summary: SummarySpec,
    pub truth: f64,
    pub lower: f64,
    pub prediction: f64,
    pub upper: f64,
    pub covered: bool,
    pub abs_error: f64,
    pub pass: bool,
}

/// Coverage of one summary across replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageTotal {
    pub summary: SummarySpec,
    pub covered: usize,
    pub replicates: usize,
    pub max_abs_error: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidateOptions {
    /// Smallest acceptable fraction of replicates whose region covers the truth.
    pub min_coverage: f64,
    /// Largest acceptable |prediction − truth|, if any.
    pub max_abs_error: Option<f64>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            min_coverage: 0.7,
            max_abs_error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationTable {
    pub rows: Vec<CoverageRow>,
    pub totals: Vec<CoverageTotal>,
    pub pass: bool,
}

impl ValidationTable {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:<16} {:>14} {:>14} {:>14} {:>14} {:>8}\n",
            "replicate", "summary", "truth", "lower", "prediction", "upper", "result"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:<16} {:>14.6} {:>14.6} {:>14.6} {:>14.6} {:>8}\n",
                r.replicate,
                r.summary.display_name(),
                r.truth,
                r.lower,
                r.prediction,
                r.upper,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<16} {:>10} {:>14} {:>8}\n",
            "summary", "covered", "max |error|", "result"
        ));
        for t in &self.totals {
            out.push_str(&format!(
                "{:<16} {:>10} {:>14.6} {:>8}\n",
                t.summary.display_name(),
                format!("{}/{}", t.covered, t.replicates),
                t.max_abs_error,
                if t.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn mismatch(dir: &Path, what: &str, expected: &str, found: &str) -> Error {
    Error::HashMismatch(format!("{}: {what}: expected {expected}, found {found}", dir.display()))
}

/// Checks that the dataset, truth, report and manifest in `dir` belong
/// together, then returns the truth and report.
pub fn load_replicate(dir: &Path) -> Result<(TruthFile, Report)> {
    let dataset_hash = file_hash(&dir.join(DATASET_FILE))?;
    let truth: TruthFile = io::read_json(&dir.join(TRUTH_FILE))?;
    if truth.dataset_hash != dataset_hash {
        return Err(mismatch(
            dir,
            "truth file dataset hash",
            &truth.dataset_hash,
            &dataset_hash,
        ));
    }
    let report: Report = io::read_json(&dir.join(REPORT_FILE))?;
    if report.run.dataset_hash != dataset_hash {
        return Err(mismatch(
            dir,
            "report dataset hash",
            &report.run.dataset_hash,
            &dataset_hash,
        ));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: RunManifest = io::read_json(&manifest_path)?;
        if manifest.run != report.run {
            return Err(Error::HashMismatch(format!(
                "{}: manifest and report describe different runs",
                dir.display()
            )));
        }
        for (file, hash) in &manifest.outputs {
            let found = file_hash(&dir.join(file))?;
            if &found != hash {
                return Err(mismatch(dir, file, hash, &found));
            }
        }
    }
    Ok((truth, report))
}

/// Coverage and prediction error of every reported summary that has a
/// known truth, per replicate and pooled.
pub fn validate_replicates(dirs: &[PathBuf], opts: &ValidateOptions) -> Result<ValidationTable> {
    if dirs.is_empty() {
        return Err(Error::invalid("no replicate directories given"));
    }
    if !(0.0..=1.0).contains(&opts.min_coverage) {
        return Err(Error::invalid(format!(
            "minimum coverage {} outside [0, 1]",
            opts.min_coverage
        )));
    }
    let mut rows = Vec::new();
    for dir in dirs {
        let (truth, report) = load_replicate(dir)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for r in &report.rows {
            let Some(t) = truth.rows.iter().find(|t| t.summary == r.summary) else {
                continue;
            };
            let covered = r.lower <= t.value && t.value <= r.upper;
            let abs_error = (r.prediction - t.value).abs();
            let error_ok = opts.max_abs_error.is_none_or(|m| abs_error <= m);
            rows.push(CoverageRow {
                replicate: name.clone(),
                summary: r.summary,
                truth: t.value,
                lower: r.lower,
                prediction: r.prediction,
                upper: r.upper,
                covered,
                abs_error,
                pass: covered && error_ok,
            });
        }
    }
    let mut totals: Vec<CoverageTotal> = Vec::new();
    for r in &rows {
        let t = match totals.iter_mut().find(|t| t.summary == r.summary) {
            Some(t) => t,
            None => {
                totals.push(CoverageTotal {
                    summary: r.summary,
                    covered: 0,
                    replicates: 0,
                    max_abs_error: 0.0,
                    pass: false,
                });
                totals.last_mut().unwrap()
            }
        };
        t.replicates += 1;
        t.covered += r.covered as usize;
        t.max_abs_error = t.max_abs_error.max(r.abs_error);
    }
    for t in &mut totals {
        let rate = t.covered as f64 / t.replicates as f64;
        let error_ok = opts.max_abs_error.is_none_or(|m| t.max_abs_error <= m);
        t.pass = rate >= opts.min_coverage && error_ok;
    }
    if totals.is_empty() {
        return Err(Error::invalid("no reported summary has a known truth"));
    }
    let pass = totals.iter().all(|t| t.pass);
    Ok(ValidationTable { rows, totals, pass })
}
