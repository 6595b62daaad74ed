//! File formats.
//!
//! Datasets, sweep logs and truth files are line-delimited JSON whose first
//! line is a header naming the schema and its version. Currency amounts are
//! integers in cents; `null` as an upper bound means unbounded. Every output
//! of a run embeds the run identity (the manifest without timestamps), so
//! two runs with equal identities write byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::censoring::{build_domain, CensoringEvidence, DomainConfig, Interval, IsfRecord, NondeductibleBounds};
use crate::data_model::{
    CalibrationTotal, ComponentCount, DesignKind, HoldingsVector, HouseholdRecord, ResponseRate, StratumInfo,
    SurveyDataset, SurveyDesign,
};
use crate::error::{Error, Result};
use crate::gibbs::{ChainOutput, VarianceMode};
use crate::indices::SummarySpec;
use crate::inference::{running_means, summary_series, PosteriorSummary};
use crate::synth::{GeneratorConfig, TruthRow};

pub const DATASET_SCHEMA: &str = "ineqsurvey.dataset";
pub const SWEEP_SCHEMA: &str = "ineqsurvey.sweeps";
pub const REPORT_SCHEMA: &str = "ineqsurvey.report";
pub const TRUTH_SCHEMA: &str = "ineqsurvey.truth";
pub const MANIFEST_SCHEMA: &str = "ineqsurvey.manifest";
pub const FORMAT_VERSION: u32 = 1;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn to_cents(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

fn from_cents(c: i64) -> f64 {
    c as f64 / 100.0
}

/// `[lo, hi]` in cents, `hi = null` for an open bracket.
type CentsBracket = [Option<i64>; 2];

fn bracket_out(iv: &Interval) -> CentsBracket {
    [Some(to_cents(iv.lo)), iv.hi.is_finite().then(|| to_cents(iv.hi))]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignDto {
    kind: DesignKind,
    #[serde(default)]
    strata: Vec<StratumInfo>,
    #[serde(default)]
    calibration_totals: Vec<CalibrationTotal>,
    #[serde(default)]
    response_rates: Vec<ResponseRate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    schema: String,
    version: u32,
    components: usize,
    design: DesignDto,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsfDto {
    pays_tax: bool,
    debt: i64,
    i_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nd: Option<[i64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordDto {
    id: String,
    weight: f64,
    stratum: String,
    psu: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inclusion_prob: Option<f64>,
    holdings: Vec<u8>,
    shares: Vec<f64>,
    covariates: Vec<Option<Vec<f64>>>,
    bounds: Vec<Option<CentsBracket>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total: Option<CentsBracket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    isf: Option<IsfDto>,
}

fn parse_error(line: usize, id: Option<&str>, path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        id: id.map(str::to_string),
        path: path.into(),
        message: message.into(),
    }
}

fn parse_json<T: DeserializeOwned>(text: &str, line: usize, id: Option<&str>) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_error(
            line,
            id,
            if path == "." { "$".into() } else { path },
            e.into_inner().to_string(),
        )
    })
}

fn bracket_in(b: &CentsBracket, line: usize, id: &str, path: &str) -> Result<Interval> {
    let lo = b[0].ok_or_else(|| parse_error(line, Some(id), format!("{path}[0]"), "lower bound is required"))?;
    if lo < 0 {
        return Err(parse_error(
            line,
            Some(id),
            format!("{path}[0]"),
            "amount must be nonnegative",
        ));
    }
    let hi = match b[1] {
        None => f64::INFINITY,
        Some(h) if h < lo => {
            return Err(parse_error(
                line,
                Some(id),
                path,
                format!("lower bound {lo} exceeds upper bound {h}"),
            ));
        }
        Some(h) => from_cents(h),
    };
    Ok(Interval::new(from_cents(lo), hi))
}

fn record_from_dto(dto: RecordDto, components: ComponentCount, line: usize) -> Result<(HouseholdRecord, Option<f64>)> {
    let id = dto.id.as_str();
    let n = components.len();
    let err = |path: &str, msg: String| parse_error(line, Some(id), path, msg);
    if dto.holdings.len() != n {
        return Err(err(
            "holdings",
            format!(
                "{} holding flags but the dataset has {n} components",
                dto.holdings.len()
            ),
        ));
    }
    if let Some(j) = dto.holdings.iter().position(|&h| h > 1) {
        return Err(err(&format!("holdings[{j}]"), "holding flags are 0 or 1".into()));
    }
    let flags: Vec<bool> = dto.holdings.iter().map(|&h| h == 1).collect();
    let holdings = HoldingsVector::new(components, &flags).map_err(|e| err("holdings", e.to_string()))?;
    if dto.bounds.len() != n {
        return Err(err(
            "bounds",
            format!("{} bound slots but the dataset has {n} components", dto.bounds.len()),
        ));
    }
    let component_bounds = dto
        .bounds
        .iter()
        .enumerate()
        .map(|(l, b)| {
            b.as_ref()
                .map(|b| bracket_in(b, line, id, &format!("bounds[{l}]")))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let total_bracket = dto
        .total
        .as_ref()
        .map(|b| bracket_in(b, line, id, "total"))
        .transpose()?;
    let isf = match dto.isf {
        None => None,
        Some(i) => {
            if i.debt < 0 {
                return Err(err("isf.debt", "amount must be nonnegative".into()));
            }
            let nd = match i.nd {
                None => None,
                Some([lo, hi]) if lo < 0 || hi < lo => {
                    return Err(err("isf.nd", format!("bad nondeductible bounds [{lo}, {hi}]")));
                }
                Some([lo, hi]) => Some(NondeductibleBounds {
                    min: from_cents(lo),
                    max: from_cents(hi),
                }),
            };
            Some(IsfRecord {
                pays_tax: i.pays_tax,
                debt: from_cents(i.debt),
                nd,
                i_flag: i.i_flag,
            })
        }
    };
    let record = HouseholdRecord {
        id: dto.id.clone(),
        weight: dto.weight,
        stratum: dto.stratum,
        psu: dto.psu,
        holdings,
        shares: dto.shares,
        covariates: dto.covariates,
        evidence: CensoringEvidence {
            component_bounds,
            total_bracket,
            isf,
        },
    };
    record
        .validate()
        .map_err(|e| parse_error(line, Some(&dto.id), "$", e.to_string()))?;
    Ok((record, dto.inclusion_prob))
}

/// Parsed dataset together with the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: SurveyDataset,
    pub hash: String,
    /// Line number of each record, in dataset (id) order.
    pub lines: Vec<usize>,
}

/// Parses a dataset from bytes. Every failure names its line.
pub fn parse_dataset(bytes: &[u8]) -> Result<LoadedDataset> {
    let hash = sha256_hex(bytes);
    let mut header: Option<(ComponentCount, SurveyDesign)> = None;
    let mut rows: Vec<(HouseholdRecord, Option<f64>, usize)> = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw).map_err(|e| parse_error(line, None, "$", format!("invalid UTF-8: {e}")))?;
        let text = text.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: DatasetHeader = parse_json(text, line, None)?;
                if h.schema != DATASET_SCHEMA {
                    return Err(parse_error(
                        line,
                        None,
                        "schema",
                        format!("expected {DATASET_SCHEMA:?}, got {:?}", h.schema),
                    ));
                }
                if h.version != FORMAT_VERSION {
                    return Err(parse_error(
                        line,
                        None,
                        "version",
                        format!("unsupported version {}", h.version),
                    ));
                }
                let components = ComponentCount::from_len(h.components)
                    .map_err(|e| parse_error(line, None, "components", e.to_string()))?;
                let mut design = SurveyDesign::new(h.design.kind).with_strata(h.design.strata);
                design.calibration_totals = h.design.calibration_totals;
                design.response_rates = h.design.response_rates;
                header = Some((components, design));
            }
            Some((components, _)) => {
                let probe: serde_json::Value = parse_json(text, line, None)?;
                let id = probe.get("id").and_then(|v| v.as_str()).map(str::to_string);
                let dto: RecordDto = parse_json(text, line, id.as_deref())?;
                let (rec, pi) = record_from_dto(dto, *components, line)?;
                rows.push((rec, pi, line));
            }
        }
    }
    let (components, mut design) = header.ok_or_else(|| parse_error(1, None, "$", "missing header line"))?;
    let with_pi = rows.iter().filter(|r| r.1.is_some()).count();
    if with_pi > 0 {
        if let Some(r) = rows.iter().find(|r| r.1.is_none()) {
            return Err(parse_error(
                r.2,
                Some(&r.0.id),
                "inclusion_prob",
                "given for some records but missing here",
            ));
        }
        design.inclusion_probs = Some(rows.iter().map(|r| r.1.unwrap()).collect());
    }
    let mut seen = std::collections::HashMap::new();
    for (r, _, line) in &rows {
        if let Some(first) = seen.insert(r.id.clone(), *line) {
            return Err(parse_error(
                *line,
                Some(&r.id),
                "id",
                format!("duplicate of line {first}"),
            ));
        }
    }
    let mut line_of: std::collections::HashMap<String, usize> = rows.iter().map(|r| (r.0.id.clone(), r.2)).collect();
    let records: Vec<HouseholdRecord> = rows.into_iter().map(|r| r.0).collect();
    let dataset = SurveyDataset::new(components, design, records)?;
    let lines = dataset.records.iter().map(|r| line_of.remove(&r.id).unwrap()).collect();
    Ok(LoadedDataset { dataset, hash, lines })
}

/// Reads, validates and feasibility-checks a dataset. With `components`
/// set to four, a 5-component file is aggregated.
pub fn ingest(path: &Path, domain: &DomainConfig, components: Option<ComponentCount>) -> Result<LoadedDataset> {
    let bytes = fs::read(path)?;
    let mut loaded = parse_dataset(&bytes)?;
    check_domains(&loaded)?;
    match (components, loaded.dataset.components) {
        (None, _) => {}
        (Some(want), have) if want == have => {}
        (Some(ComponentCount::Four), ComponentCount::Five) => {
            loaded.dataset = loaded.dataset.aggregate_real_estate()?;
        }
        (Some(want), have) => {
            return Err(Error::invalid(format!(
                "cannot convert a {have}-component dataset to {want} components"
            )));
        }
    }
    // Domains of the (possibly aggregated) dataset under the run's cap.
    for (r, line) in loaded.dataset.records.iter().zip(&loaded.lines) {
        build_domain(&r.id, &r.holdings, &r.shares, &r.evidence, domain).map_err(|e| locate(e, *line))?;
    }
    Ok(loaded)
}

fn locate(e: Error, line: usize) -> Error {
    match e {
        Error::InconsistentEvidence { household, constraint } => Error::InconsistentEvidence {
            household: format!("{household} (line {line})"),
            constraint,
        },
        other => other,
    }
}

fn check_domains(loaded: &LoadedDataset) -> Result<()> {
    let config = DomainConfig::default();
    for (r, line) in loaded.dataset.records.iter().zip(&loaded.lines) {
        build_domain(&r.id, &r.holdings, &r.shares, &r.evidence, &config).map_err(|e| locate(e, *line))?;
    }
    Ok(())
}

fn record_to_dto(r: &HouseholdRecord, pi: Option<f64>) -> RecordDto {
    let ev = &r.evidence;
    RecordDto {
        id: r.id.clone(),
        weight: r.weight,
        stratum: r.stratum.clone(),
        psu: r.psu.clone(),
        inclusion_prob: pi,
        holdings: r.holdings.flags().iter().map(|&f| f as u8).collect(),
        shares: r.shares.clone(),
        covariates: r.covariates.clone(),
        bounds: ev
            .component_bounds
            .iter()
            .map(|b| b.as_ref().map(bracket_out))
            .collect(),
        total: ev.total_bracket.as_ref().map(bracket_out),
        isf: ev.isf.as_ref().map(|i| IsfDto {
            pays_tax: i.pays_tax,
            debt: to_cents(i.debt),
            i_flag: i.i_flag,
            nd: i.nd.map(|nd| [to_cents(nd.min), to_cents(nd.max)]),
        }),
    }
}

/// Serializes a dataset. Amounts are rounded to cents.
pub fn dataset_to_bytes(ds: &SurveyDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.into(),
        version: FORMAT_VERSION,
        components: ds.components.len(),
        design: DesignDto {
            kind: ds.design.kind,
            strata: ds.design.strata.clone(),
            calibration_totals: ds.design.calibration_totals.clone(),
            response_rates: ds.design.response_rates.clone(),
        },
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (k, r) in ds.records.iter().enumerate() {
        let pi = ds.design.inclusion_probs.as_ref().map(|p| p[k]);
        serde_json::to_writer(&mut out, &record_to_dto(r, pi))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Writes a dataset and returns its hash.
pub fn write_dataset(ds: &SurveyDataset, path: &Path) -> Result<String> {
    let bytes = dataset_to_bytes(ds)?;
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Everything that determines the output of an estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunIdentity {
    pub software_version: String,
    pub dataset_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub alpha: f64,
    pub summaries: Vec<SummarySpec>,
    pub variance_mode: VarianceMode,
    /// How often the design variance is recomputed.
    pub variance_cadence: String,
    pub region: String,
    pub cap: f64,
    pub floor: f64,
    pub tax_threshold: f64,
}

impl RunIdentity {
    /// Hash of the configuration fields (everything except the dataset
    /// hash, the version and the config hash itself).
    pub fn compute_config_hash(&self) -> String {
        let mut probe = self.clone();
        probe.config_hash = String::new();
        probe.dataset_hash = String::new();
        probe.software_version = String::new();
        sha256_hex(&serde_json::to_vec(&probe).expect("identity serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: u32,
    pub run: RunIdentity,
    /// SHA-256 of every output file written next to the manifest.
    pub outputs: Vec<(String, String)>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct SweepHeader<'a> {
    schema: &'a str,
    version: u32,
    run: &'a RunIdentity,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SweepLine {
    pub chain: usize,
    pub n: usize,
    pub summary: SummarySpec,
    pub g_hat: f64,
    pub v_hat: f64,
    pub e: f64,
    pub g: f64,
}

/// One line per sweep per summary, chains in order.
pub fn write_sweep_log(chains: &[ChainOutput], run: &RunIdentity, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &SweepHeader {
            schema: SWEEP_SCHEMA,
            version: FORMAT_VERSION,
            run,
        },
    )?;
    w.write_all(b"\n")?;
    for c in chains {
        for r in &c.records {
            for (spec, d) in c.summaries.iter().zip(&r.draws) {
                let line = SweepLine {
                    chain: c.chain,
                    n: r.sweep,
                    summary: *spec,
                    g_hat: d.g_hat,
                    v_hat: d.v_hat,
                    e: r.e,
                    g: d.g,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the records of a sweep log (header skipped).
pub fn read_sweep_log(path: &Path) -> Result<Vec<SweepLine>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_json(l, i + 1, None))
        .collect()
}

/// Running means of `g` from the first sweep, one row per sweep and chain.
pub fn write_running_means(chains: &[ChainOutput], run: &RunIdentity, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# run {}", serde_json::to_string(run)?)?;
    let Some(first) = chains.first() else {
        return Ok(());
    };
    write!(w, "chain\tsweep")?;
    for s in &first.summaries {
        write!(w, "\t{s}")?;
    }
    writeln!(w)?;
    for c in chains {
        let series: Vec<Vec<f64>> = (0..c.summaries.len())
            .map(|i| running_means(&summary_series(std::slice::from_ref(c), i, 0).1))
            .collect();
        for (j, r) in c.records.iter().enumerate() {
            write!(w, "{}\t{}", c.chain, r.sweep)?;
            for s in &series {
                write!(w, "\t{}", s[j])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub summary: SummarySpec,
    pub label: String,
    pub lower: f64,
    pub prediction: f64,
    pub upper: f64,
    pub sd: f64,
    pub n_used: usize,
    pub chain_delta: f64,
    pub drift_flag: bool,
    pub effective_sample_size: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub run: RunIdentity,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(run: RunIdentity, summaries: &[PosteriorSummary]) -> Self {
        let rows = summaries
            .iter()
            .map(|s| ReportRow {
                summary: s.spec,
                label: s.spec.display_name(),
                lower: s.lower,
                prediction: s.mean,
                upper: s.upper,
                sd: s.sd,
                n_used: s.n_used,
                chain_delta: s.chain_delta,
                drift_flag: s.diagnostics.drift_flag,
                effective_sample_size: s.diagnostics.effective_sample_size,
                warnings: s.diagnostics.warnings.clone(),
            })
            .collect();
        Self {
            schema: REPORT_SCHEMA.into(),
            version: FORMAT_VERSION,
            run,
            rows,
        }
    }

    pub fn row(&self, spec: SummarySpec) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.summary == spec)
    }

    /// Fixed-width table: lower bound, prediction, upper bound per row.
    pub fn to_table(&self) -> String {
        let level = format!("{}%", ((1.0 - self.run.alpha) * 100.0 * 1e6).round() / 1e6);
        let mut out = format!(
            "{:<16} {:>16} {:>16} {:>16}\n",
            "Summary",
            format!("{level} lower"),
            "Prediction",
            format!("{level} upper")
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>16} {:>16} {:>16}\n",
                r.label,
                fmt_value(r.lower),
                fmt_value(r.prediction),
                fmt_value(r.upper)
            ));
        }
        out
    }
}

fn fmt_value(v: f64) -> String {
    if v.abs() >= 1_000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        line: e.inner().line(),
        id: None,
        path: format!("{}: {}", path.display(), e.path()),
        message: e.inner().to_string(),
    })
}

/// Population truth for a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema: String,
    pub version: u32,
    pub dataset_hash: String,
    pub seed: u64,
    pub population_size: usize,
    pub sample_size: usize,
    pub generator: GeneratorConfig,
    pub rows: Vec<TruthRow>,
}

impl TruthFile {
    pub fn new(
        dataset_hash: String,
        seed: u64,
        population_size: usize,
        sample_size: usize,
        generator: GeneratorConfig,
        rows: Vec<TruthRow>,
    ) -> Self {
        Self {
            schema: TRUTH_SCHEMA.into(),
            version: FORMAT_VERSION,
            dataset_hash,
            seed,
            population_size,
            sample_size,
            generator,
            rows,
        }
    }
}
