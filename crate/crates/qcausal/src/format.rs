//! JSON file formats for comb specs, POVMs, configs and results.
//!
//! Complex numbers are `[re, im]` pairs and matrices are row-major nested
//! arrays of them. Every top-level document carries `format_version`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use qcausal_core::comb::{CausalOrder, CombMetadata, CombSpec};
use qcausal_core::discovery::{Algorithm, Diagnostics, DiscoveryReport, Failure, IndMatrix, PairTest};
use qcausal_core::oracle::{OracleMode, QueryPolicy};
use qcausal_core::povm::{ic_povm_for_dim, random_ic_povm, sic_qubit, sic_qubit_power, IcPovm, PovmKind};
use qcausal_core::{Matrix, Wire};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

pub type ComplexDto = [f64; 2];
pub type MatrixDto = Vec<Vec<ComplexDto>>;

pub fn complex_to_dto(z: Complex64) -> ComplexDto {
    [z.re, z.im]
}

pub fn matrix_to_dto(m: &Matrix) -> MatrixDto {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| complex_to_dto(m[(r, c)])).collect())
        .collect()
}

pub fn matrix_from_dto(rows: &MatrixDto) -> Result<Matrix> {
    let n = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        bail!("ragged matrix");
    }
    Ok(Matrix::from_fn(n, cols, |r, c| {
        Complex64::new(rows[r][c][0], rows[r][c][1])
    }))
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        bail!("unsupported format_version {v} (expected {FORMAT_VERSION})");
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, to_json(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataDto {
    pub generator: String,
    pub seed: Option<u64>,
    pub achieved_chi_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombFile {
    pub format_version: u32,
    pub n: usize,
    pub d_a: usize,
    pub d_m: usize,
    pub psi0: Vec<ComplexDto>,
    pub unitaries: Vec<MatrixDto>,
    pub sigma_true: Vec<usize>,
    pub pi_true: Vec<usize>,
    pub metadata: MetadataDto,
}

impl CombFile {
    pub fn from_spec(spec: &CombSpec) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n: spec.n,
            d_a: spec.d_a,
            d_m: spec.d_m,
            psi0: spec.psi0.iter().copied().map(complex_to_dto).collect(),
            unitaries: spec.unitaries.iter().map(matrix_to_dto).collect(),
            sigma_true: spec.sigma_true.clone(),
            pi_true: spec.pi_true.clone(),
            metadata: MetadataDto {
                generator: spec.metadata.generator.clone(),
                seed: spec.metadata.seed,
                achieved_chi_min: spec.metadata.achieved_chi_min,
            },
        }
    }

    pub fn to_spec(&self) -> Result<CombSpec> {
        check_version(self.format_version)?;
        let spec = CombSpec {
            n: self.n,
            d_a: self.d_a,
            d_m: self.d_m,
            psi0: self.psi0.iter().map(|z| Complex64::new(z[0], z[1])).collect(),
            unitaries: self.unitaries.iter().map(matrix_from_dto).collect::<Result<_>>()?,
            sigma_true: self.sigma_true.clone(),
            pi_true: self.pi_true.clone(),
            metadata: CombMetadata {
                generator: self.metadata.generator.clone(),
                seed: self.metadata.seed,
                achieved_chi_min: self.metadata.achieved_chi_min,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn save_comb(path: &Path, spec: &CombSpec) -> Result<()> {
    write_json(path, &CombFile::from_spec(spec))
}

pub fn load_comb(path: &Path) -> Result<CombSpec> {
    read_json::<CombFile>(path)?.to_spec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PovmKindDto {
    Povm,
    StateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PovmFile {
    pub format_version: u32,
    pub kind: PovmKindDto,
    pub elements: Vec<MatrixDto>,
}

impl PovmFile {
    pub fn from_povm(povm: &IcPovm) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: match povm.kind() {
                PovmKind::Povm => PovmKindDto::Povm,
                PovmKind::StateSet => PovmKindDto::StateSet,
            },
            elements: povm.elements().iter().map(matrix_to_dto).collect(),
        }
    }

    pub fn to_povm(&self) -> Result<IcPovm> {
        check_version(self.format_version)?;
        let kind = match self.kind {
            PovmKindDto::Povm => PovmKind::Povm,
            PovmKindDto::StateSet => PovmKind::StateSet,
        };
        let elements = self.elements.iter().map(matrix_from_dto).collect::<Result<_>>()?;
        Ok(IcPovm::new(elements, kind)?)
    }
}

/// Named POVM choices: `auto`, `sic2`, `sic2^k`, `random-ic:<seed>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PovmPreset {
    Auto,
    SicPower(u32),
    RandomIc(u64),
}

impl FromStr for PovmPreset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(PovmPreset::Auto);
        }
        if s == "sic2" {
            return Ok(PovmPreset::SicPower(1));
        }
        if let Some(k) = s.strip_prefix("sic2^") {
            let k: u32 = k.parse().with_context(|| format!("bad tensor power in {s:?}"))?;
            if k == 0 {
                bail!("tensor power must be positive");
            }
            return Ok(PovmPreset::SicPower(k));
        }
        if let Some(seed) = s.strip_prefix("random-ic:") {
            return Ok(PovmPreset::RandomIc(
                seed.parse().with_context(|| format!("bad seed in {s:?}"))?,
            ));
        }
        bail!("unknown POVM preset {s:?}")
    }
}

impl std::fmt::Display for PovmPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PovmPreset::Auto => write!(f, "auto"),
            PovmPreset::SicPower(1) => write!(f, "sic2"),
            PovmPreset::SicPower(k) => write!(f, "sic2^{k}"),
            PovmPreset::RandomIc(s) => write!(f, "random-ic:{s}"),
        }
    }
}

impl PovmPreset {
    pub fn build(&self, d: usize) -> Result<IcPovm> {
        match *self {
            PovmPreset::Auto => Ok(ic_povm_for_dim(d, &mut ChaCha8Rng::seed_from_u64(d as u64))?),
            PovmPreset::SicPower(k) => {
                if d != 1usize << k {
                    bail!("preset {self} needs wire dimension {}, got {d}", 1usize << k);
                }
                if k == 1 {
                    Ok(sic_qubit())
                } else {
                    Ok(sic_qubit_power(k as usize)?)
                }
            }
            PovmPreset::RandomIc(seed) => Ok(random_ic_povm(d, &mut ChaCha8Rng::seed_from_u64(seed))?),
        }
    }
}

pub fn format_order(order: &CausalOrder) -> Vec<[String; 2]> {
    order
        .teeth()
        .iter()
        .map(|(a, b)| [a.to_string(), b.to_string()])
        .collect()
}

pub fn order_from_pairs(pairs: &[[String; 2]]) -> Result<CausalOrder> {
    let teeth = pairs
        .iter()
        .map(|[a, b]| Ok((a.parse::<Wire>()?, b.parse::<Wire>()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CausalOrder::new(teeth)?)
}

/// Parses `(A1,B2),(A2,B1)` (whitespace and brackets optional).
pub fn parse_order(text: &str) -> Result<CausalOrder> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '(' | ')' | '[' | ']'))
        .collect();
    let parts: Vec<&str> = cleaned.split(',').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() || !parts.len().is_multiple_of(2) {
        bail!("order must list (input,output) pairs, got {text:?}");
    }
    let pairs: Vec<[String; 2]> = parts.chunks(2).map(|c| [c[0].to_string(), c[1].to_string()]).collect();
    order_from_pairs(&pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTestDto {
    pub input: String,
    pub output: String,
    pub estimates: Vec<f64>,
    pub distances: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDto {
    pub accepted: Option<[String; 2]>,
    pub tests: Vec<PairTestDto>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndMatrixDto {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub ind: Vec<Vec<bool>>,
    pub chi_hat: Vec<Vec<f64>>,
    pub chi_minus: f64,
    pub shots: u64,
}

impl From<&IndMatrix> for IndMatrixDto {
    fn from(m: &IndMatrix) -> Self {
        Self {
            inputs: m.inputs.iter().map(Wire::to_string).collect(),
            outputs: m.outputs.iter().map(Wire::to_string).collect(),
            ind: m.ind.clone(),
            chi_hat: m.chi_hat.clone(),
            chi_minus: m.chi_minus,
            shots: m.shots,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct DiagnosticsDto {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rounds: Vec<RoundDto>,
    pub swap_tests: u64,
    pub swap_runs_per_test: u64,
    pub union_bound_swap_tests: u64,
    pub worst_case_swap_tests: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub independence: Vec<IndMatrixDto>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub c_a: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub c_b: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fallback_order: Option<Vec<[String; 2]>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub first_pass_matches: Vec<[String; 2]>,
}

fn pair_test_dto(t: &PairTest) -> PairTestDto {
    PairTestDto {
        input: t.input.to_string(),
        output: t.output.to_string(),
        estimates: t.estimates.clone(),
        distances: t.distances.clone(),
        passed: t.passed,
    }
}

impl From<&Diagnostics> for DiagnosticsDto {
    fn from(d: &Diagnostics) -> Self {
        Self {
            rounds: d
                .rounds
                .iter()
                .map(|r| RoundDto {
                    accepted: r.accepted.map(|(a, b)| [a.to_string(), b.to_string()]),
                    tests: r.tests.iter().map(pair_test_dto).collect(),
                })
                .collect(),
            swap_tests: d.swap_tests,
            swap_runs_per_test: d.swap_runs_per_test,
            union_bound_swap_tests: d.union_bound_swap_tests,
            worst_case_swap_tests: d.worst_case_swap_tests,
            independence: d.independence.iter().map(IndMatrixDto::from).collect(),
            c_a: d.c_a.clone(),
            c_b: d.c_b.clone(),
            fallback_order: d.fallback_order.as_ref().map(format_order),
            first_pass_matches: d
                .first_pass_matches
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        }
    }
}

/// Bookkeeping of worst-case query counts next to the measured ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct TheoryDto {
    /// `lambda_min` of the POVM frame used on each wire.
    pub lambda_povm: Option<f64>,
    /// `lambda_min` of the normalised state-set frame.
    pub lambda_state_set: Option<f64>,
    /// Queries if every SWAP test in the union-bound count were run.
    pub union_bound_queries: Option<u64>,
    /// Trace-norm accuracy implied by the configured `delta`.
    pub implied_eps0: Option<f64>,
    /// Unit-constant value of the asymptotic query bound at `implied_eps0`.
    pub query_order_formula: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub algorithm: String,
    pub order: Option<Vec<[String; 2]>>,
    pub queries: u64,
    pub theoretical_queries: u64,
    pub wall_ms: f64,
    pub failure: Option<String>,
    pub theory: TheoryDto,
    pub diagnostics: DiagnosticsDto,
}

impl ReportFile {
    pub fn from_report(report: &DiscoveryReport, wall_ms: f64, theory: TheoryDto) -> Self {
        Self {
            algorithm: report.algorithm.name().to_string(),
            order: report.order.as_ref().map(format_order),
            queries: report.queries,
            theoretical_queries: report.theoretical_queries,
            wall_ms,
            failure: report.failure.as_ref().map(|f| match f {
                Failure::NotAComb => "not-a-comb".to_string(),
                Failure::AssumptionViolated(msg) => format!("assumption-violated: {msg}"),
            }),
            theory,
            diagnostics: DiagnosticsDto::from(&report.diagnostics),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Unitary,
    Memoryless,
    Totalorder,
    PairwiseBlind,
    CnotMemory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d_a: usize,
    #[serde(default = "default_d")]
    pub d_m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chi_floor_target: Option<f64>,
}

fn default_n() -> usize {
    2
}

fn default_d() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    General,
    Totalorder,
    Memoryless,
}

impl From<AlgorithmKind> for Algorithm {
    fn from(k: AlgorithmKind) -> Self {
        match k {
            AlgorithmKind::General => Algorithm::General,
            AlgorithmKind::Totalorder => Algorithm::TotalOrder,
            AlgorithmKind::Memoryless => Algorithm::Memoryless,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub chi_minus: Option<f64>,
    #[serde(default)]
    pub chi_min: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeDto {
    Exact,
    Sampled,
}

impl From<ModeDto> for OracleMode {
    fn from(m: ModeDto) -> Self {
        match m {
            ModeDto::Exact => OracleMode::Exact,
            ModeDto::Sampled => OracleMode::Sampled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyDto {
    #[default]
    Actual,
    Theoretical,
}

impl From<PolicyDto> for QueryPolicy {
    fn from(p: PolicyDto) -> Self {
        match p {
            PolicyDto::Actual => QueryPolicy::Actual,
            PolicyDto::Theoretical => QueryPolicy::Theoretical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: ModeDto,
    #[serde(default)]
    pub query_policy: PolicyDto,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dim_cap")]
    pub dim_cap: usize,
}

fn default_dim_cap() -> usize {
    qcausal_core::comb::DEFAULT_DIM_CAP
}

fn default_trials() -> usize {
    1
}

fn default_preset() -> String {
    "auto".to_string()
}

fn default_verify_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub generator: GeneratorConfig,
    pub algorithm: AlgorithmConfig,
    pub oracle: OracleConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_preset")]
    pub povm_preset: String,
    #[serde(default)]
    pub output_path: Option<String>,
    /// Checker tolerance used to score a trial as a success.
    #[serde(default = "default_verify_tol")]
    pub verify_tol: f64,
}

impl ExperimentConfig {
    /// Rejects inconsistent combinations before any work is done.
    pub fn validate(&self) -> Result<()> {
        check_version(self.format_version)?;
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        let preset: PovmPreset = self.povm_preset.parse()?;
        let g = &self.generator;
        if g.n == 0 || g.d_a == 0 || g.d_m == 0 {
            bail!("generator n, d_a and d_m must be positive");
        }
        if g.kind == GeneratorKind::Totalorder && g.chi_floor_target.is_none() {
            bail!("totalorder generator needs chi_floor_target");
        }
        let a = &self.algorithm;
        let in_unit = |x: Option<f64>, name: &str| -> Result<()> {
            match x {
                Some(v) if v > 0.0 && v < 1.0 => Ok(()),
                Some(v) => bail!("{name} must lie in (0,1), got {v}"),
                None => bail!("{name} is required for the {:?} algorithm", a.kind),
            }
        };
        match a.kind {
            AlgorithmKind::General => {
                in_unit(a.delta, "delta")?;
                in_unit(a.kappa, "kappa")?;
            }
            AlgorithmKind::Totalorder => {
                let has_floor = g.kind == GeneratorKind::Totalorder || a.chi_min.is_some() || a.chi_minus.is_some();
                if !has_floor {
                    bail!("totalorder algorithm needs chi_min metadata (totalorder generator) or an explicit chi_min/chi_minus");
                }
            }
            AlgorithmKind::Memoryless => {
                if a.chi_minus.is_none() {
                    bail!("memoryless algorithm needs chi_minus");
                }
            }
        }
        if a.kind == AlgorithmKind::Memoryless && self.oracle.mode == ModeDto::Sampled && a.shots.unwrap_or(0) == 0 {
            bail!("sampled memoryless runs need shots >= 1");
        }
        if a.shots == Some(0) {
            bail!("shots must be at least 1");
        }
        if a.kind != AlgorithmKind::General {
            let needed = match g.kind {
                GeneratorKind::PairwiseBlind | GeneratorKind::CnotMemory => 2,
                _ => g.d_a,
            };
            preset.build(needed)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub ok: bool,
    pub worst_deviation: f64,
    pub deviations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub oracle_seed: u64,
    pub report: ReportFile,
    pub verification: Option<Verification>,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive upper edge; `None` for the overflow bin.
    pub upper: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub success_rate: f64,
    pub mean_queries: f64,
    pub mean_wall_ms: f64,
    pub failures: usize,
    pub deviation_histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub true_order: Vec<[String; 2]>,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

/// One line of the optional query log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLogRecord {
    pub trial: usize,
    pub op: String,
    pub count: u64,
}

/// Fixed-width text table of a run summary.
pub fn summary_table(summary: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:>8}  {:>14}  {:>10}  {:>11}  order",
        "trial", "success", "queries", "wall_ms", "deviation"
    );
    for t in &summary.trials {
        let order = match &t.report.order {
            Some(o) => o
                .iter()
                .map(|[a, b]| format!("({a},{b})"))
                .collect::<Vec<_>>()
                .join(","),
            None => t.report.failure.clone().unwrap_or_default(),
        };
        let dev = t
            .verification
            .as_ref()
            .map_or("-".to_string(), |v| format!("{:.3e}", v.worst_deviation));
        let _ = writeln!(
            out,
            "{:>5}  {:>8}  {:>14}  {:>10.2}  {:>11}  {}",
            t.trial, t.success, t.report.queries, t.report.wall_ms, dev, order
        );
    }
    let a = &summary.aggregate;
    let _ = writeln!(
        out,
        "success_rate={:.4} mean_queries={:.1} mean_wall_ms={:.2} failures={}",
        a.success_rate, a.mean_queries, a.mean_wall_ms, a.failures
    );
    out
}

pub fn parse_wire_list(text: &str) -> Result<Vec<Wire>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Wire>().map_err(|e| anyhow!("{e}")))
        .collect()
}
