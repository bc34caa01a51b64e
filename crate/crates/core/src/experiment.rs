//! Monte-Carlo harness: Jeffreys-interval adaptive trial sizing, phase grids
//! over (M, T, K), closed-form score expectations, and the results CSV
//! format.
//!
//! Every trial draws a fresh anomaly set, signal ensemble, and sensing
//! sequence from a substream keyed by `(m, t, k, trial)`, so grids are
//! deterministic for a given base seed no matter how cells are scheduled.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::detect::DetectorSpec;
use crate::error::{Error, Result};
use crate::model::{
    draw_sensing, generate_signals, measure, sample_anomaly_set, GaussianSpec, IndexSet,
    MeasurementSet, ProblemSpec, SensingSequence, SignalEnsemble, SignalModel,
};
use crate::rng::substream_seed;

/// Problem template for grid runs; the anomaly count comes from the grid's
/// `k_values` and the anomaly set is redrawn every trial.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemTemplate {
    #[serde(rename = "N")]
    pub n_vars: usize,
    pub model: SignalModel,
    pub prevalent: GaussianSpec,
    pub anomalous: GaussianSpec,
}

/// A phase-transition grid: which cells to run and how to stop each one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m_values: Vec<usize>,
    pub t_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub template: ProblemTemplate,
    pub detector: DetectorSpec,
    /// Two-sided confidence level of the stopping interval.
    pub confidence: f64,
    /// Stop a cell once the interval is narrower than this.
    pub target_width: f64,
    pub min_trials: u64,
    pub max_trials: u64,
    pub base_seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() || self.t_values.is_empty() || self.k_values.is_empty() {
            return Err(Error::Config(
                "m_values/t_values/k_values: must be non-empty".into(),
            ));
        }
        if self.m_values.contains(&0) || self.t_values.contains(&0) {
            return Err(Error::Config(
                "m_values/t_values: entries must be >= 1".into(),
            ));
        }
        if self.template.n_vars < 2 {
            return Err(Error::Config("problem.N: must be >= 2".into()));
        }
        if self
            .k_values
            .iter()
            .any(|&k| k == 0 || k >= self.template.n_vars)
        {
            return Err(Error::Config(format!(
                "k_values: entries must satisfy 1 <= K < N={}",
                self.template.n_vars
            )));
        }
        self.template
            .prevalent
            .validate()
            .map_err(|e| Error::Config(format!("problem.prevalent: {e}")))?;
        self.template
            .anomalous
            .validate()
            .map_err(|e| Error::Config(format!("problem.anomalous: {e}")))?;
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence: must lie in (0,1), got {}",
                self.confidence
            )));
        }
        if !(self.target_width > 0.0 && self.target_width < 1.0) {
            return Err(Error::Config(format!(
                "target_width: must lie in (0,1), got {}",
                self.target_width
            )));
        }
        if self.min_trials == 0 || self.min_trials > self.max_trials {
            return Err(Error::Config(format!(
                "min_trials/max_trials: need 1 <= min <= max, got {}/{}",
                self.min_trials, self.max_trials
            )));
        }
        Ok(())
    }
}

/// The grid JSON document. Algorithm parameters sit flat next to the grid
/// axes: `{"algorithm": "acie", "inner": "osga", "L": 5, "lambda": null,
/// "tol": 1e-6, ...}`; omitted fields take the documented defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub m_values: Vec<usize>,
    pub t_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub problem: ProblemTemplate,
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<String>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub acie_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reestimate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lasso_iters: Option<usize>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_target_width")]
    pub target_width: f64,
    #[serde(default = "default_min_trials")]
    pub min_trials: u64,
    #[serde(default = "default_max_trials")]
    pub max_trials: u64,
    pub base_seed: u64,
}

fn default_confidence() -> f64 {
    0.95
}
fn default_target_width() -> f64 {
    0.1
}
fn default_min_trials() -> u64 {
    20
}
fn default_max_trials() -> u64 {
    10_000
}

impl GridConfig {
    /// Validates and resolves the flat document into a [`GridSpec`].
    pub fn into_spec(self) -> Result<GridSpec> {
        let algorithm = crate::detect::Algorithm::parse(&self.algorithm)?;
        let mut detector = DetectorSpec::new(algorithm);
        if let Some(inner) = &self.inner {
            detector.inner = crate::detect::InnerKind::parse(inner)?;
        }
        if let Some(l) = self.acie_iters {
            if l == 0 {
                return Err(Error::Config("L: must be >= 1".into()));
            }
            detector.acie_iters = l;
        }
        if let Some(r) = self.reestimate {
            detector.acie_reestimate = r;
        }
        if let Some(lambda) = self.lambda {
            if lambda < 0.0 {
                return Err(Error::Config(format!("lambda: must be >= 0, got {lambda}")));
            }
            detector.lasso.lambda = Some(lambda);
        }
        if let Some(tol) = self.tol {
            if tol <= 0.0 {
                return Err(Error::Config(format!("tol: must be > 0, got {tol}")));
            }
            detector.lasso.tol = tol;
        }
        if let Some(iters) = self.max_lasso_iters {
            if iters == 0 {
                return Err(Error::Config("max_lasso_iters: must be >= 1".into()));
            }
            detector.lasso.max_iters = iters;
        }
        let spec = GridSpec {
            m_values: self.m_values,
            t_values: self.t_values,
            k_values: self.k_values,
            template: self.problem,
            detector,
            confidence: self.confidence,
            target_width: self.target_width,
            min_trials: self.min_trials,
            max_trials: self.max_trials,
            base_seed: self.base_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One phase-diagram cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the cell stopped at `max_trials` instead of the width rule.
    pub hit_max_trials: bool,
    /// Trials whose detector returned an error (counted as failures).
    pub detector_errors: u64,
    pub wall_time: Duration,
}

/// Everything a single trial drew, handed to the detector closure.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub truth: IndexSet,
    pub spec: ProblemSpec,
    pub signals: SignalEnsemble,
    pub sensing: SensingSequence,
    pub measurements: MeasurementSet,
}

/// Runs one cell with the grid's configured detector.
pub fn run_cell(grid: &GridSpec, m: usize, t: usize, k: usize) -> Result<CellResult> {
    let detector = grid.detector.clone();
    run_cell_with(grid, m, t, k, |data| {
        detector
            .run(&data.measurements, &data.sensing, data.truth.len())
            .map(|r| r.estimated_set)
    })
}

/// Runs one cell with an arbitrary per-trial detector (stubs in tests).
/// Detector errors count as failed trials and never abort the cell.
pub fn run_cell_with(
    grid: &GridSpec,
    m: usize,
    t: usize,
    k: usize,
    mut detect: impl FnMut(&TrialData) -> Result<IndexSet>,
) -> Result<CellResult> {
    grid.validate()?;
    if !grid.m_values.contains(&m) || !grid.t_values.contains(&t) || !grid.k_values.contains(&k) {
        return Err(Error::Config(format!(
            "cell (M={m}, T={t}, K={k}) is not part of the grid"
        )));
    }
    let started = Instant::now();
    let n = grid.template.n_vars;
    let mut successes = 0u64;
    let mut trials = 0u64;
    let mut detector_errors = 0u64;
    let (mut ci_low, mut ci_high);
    let mut hit_max_trials = false;

    loop {
        let seed = substream_seed(grid.base_seed, &[m as u64, t as u64, k as u64, trials]);
        let mut rng = crate::rng::SeededRng::new(seed);
        let truth = sample_anomaly_set(n, k, &mut rng)?;
        let spec = ProblemSpec::new(
            n,
            truth.clone(),
            grid.template.prevalent,
            grid.template.anomalous,
            grid.template.model,
        )?;
        let signals = generate_signals(&spec, t, &mut rng)?;
        let sensing = draw_sensing(m, n, t, &mut rng)?;
        let measurements = measure(&sensing, &signals)?;
        let data = TrialData {
            truth,
            spec,
            signals,
            sensing,
            measurements,
        };
        match detect(&data) {
            Ok(estimated) => {
                if estimated == data.truth {
                    successes += 1;
                }
            }
            Err(_) => detector_errors += 1,
        }
        trials += 1;

        let (low, high) = jeffreys_interval(successes, trials, grid.confidence)?;
        ci_low = low;
        ci_high = high;
        if trials >= grid.min_trials && high - low < grid.target_width {
            break;
        }
        if trials >= grid.max_trials {
            hit_max_trials = true;
            break;
        }
    }

    Ok(CellResult {
        m,
        t,
        k,
        successes,
        trials,
        rate: successes as f64 / trials as f64,
        ci_low,
        ci_high,
        hit_max_trials,
        detector_errors,
        wall_time: started.elapsed(),
    })
}

/// Runs every `(m, t, k)` combination, cells in parallel on the current
/// rayon pool. Output order is `k`-major, then `m`, then `t`, and results
/// are identical for a given base seed at any thread count.
pub fn run_grid(grid: &GridSpec) -> Result<Vec<CellResult>> {
    grid.validate()?;
    let cells: Vec<(usize, usize, usize)> = grid
        .k_values
        .iter()
        .flat_map(|&k| {
            grid.m_values
                .iter()
                .flat_map(move |&m| grid.t_values.iter().map(move |&t| (m, t, k)))
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(m, t, k)| run_cell(grid, m, t, k))
        .collect()
}

// --- Jeffreys interval -----------------------------------------------------

/// Two-sided Jeffreys interval for a binomial proportion: quantiles of
/// `Beta(successes + 1/2, failures + 1/2)`, with the conventional exact
/// endpoints at zero successes or zero failures.
pub fn jeffreys_interval(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Domain("jeffreys: need trials >= 1".into()));
    }
    if successes > trials {
        return Err(Error::Domain(format!(
            "jeffreys: successes {successes} exceed trials {trials}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!(
            "jeffreys: confidence must lie in (0,1), got {confidence}"
        )));
    }
    let a = successes as f64 + 0.5;
    let b = (trials - successes) as f64 + 0.5;
    let tail = (1.0 - confidence) / 2.0;
    let low = if successes == 0 {
        0.0
    } else {
        beta_quantile(a, b, tail)
    };
    let high = if successes == trials {
        1.0
    } else {
        beta_quantile(a, b, 1.0 - tail)
    };
    Ok((low, high))
}

/// Beta quantile by bisection on the regularized incomplete beta function,
/// to 1e-10 in the argument (the contract asks for 1e-8).
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        if hi - lo <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if betainc_regularized(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Regularized incomplete beta `I_x(a, b)` via the continued fraction with
/// the standard symmetry split.
pub(crate) fn betainc_regularized(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - (ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b)
    }
}

/// Lentz's algorithm for the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let mf = m as f64;
        let m2 = 2.0 * mf;

        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 3e-16 {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-13 relative for
/// positive arguments.
#[allow(clippy::excessive_precision)] // published Lanczos constants, kept verbatim
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let z = x - 1.0;
    let mut sum = 0.999_999_999_999_809_93;
    for (i, &c) in COEFFS.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + sum.ln()
}

// --- Theory oracles --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Prevalent,
    Anomalous,
}

/// Parameters of the closed-form score expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryCase {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub mu2: f64,
    pub sigma2_sq: f64,
    pub sigma1_sq: f64,
    pub case: CaseKind,
}

/// Limit of the mean squared correlation statistic for a prevalent or an
/// anomalous index, under standard-normal sensing and a zero-mean prevalent
/// distribution:
///
/// prevalent: `M [K (mu2^2 + s2^2) + (M + 1 + N - K) s1^2]`
/// anomalous: `M [(M + 1 + K) (mu2^2 + s2^2) + (N - K) s1^2]`
pub fn theory_xi_expectation(case: &TheoryCase) -> f64 {
    let m = case.m as f64;
    let n = case.n as f64;
    let k = case.k as f64;
    let second_moment = case.mu2 * case.mu2 + case.sigma2_sq;
    match case.case {
        CaseKind::Prevalent => m * (k * second_moment + (m + 1.0 + n - k) * case.sigma1_sq),
        CaseKind::Anomalous => m * ((m + 1.0 + k) * second_moment + (n - k) * case.sigma1_sq),
    }
}

/// Difference between the anomalous and prevalent expectations:
/// `M (M + 1) (mu2^2 + s2^2 - s1^2)`.
pub fn theory_xi_gap(m: usize, mu2: f64, sigma2_sq: f64, sigma1_sq: f64) -> f64 {
    let mf = m as f64;
    mf * (mf + 1.0) * (mu2 * mu2 + sigma2_sq - sigma1_sq)
}

/// Whether the asymptotic-recovery hypothesis holds for the model:
/// `mu2^2 + s2^2 > s1^2` for JSM-2R, `s2^2 > s1^2` for JSM-3R.
pub fn theory_separation_check(
    model: SignalModel,
    mu2: f64,
    sigma2_sq: f64,
    sigma1_sq: f64,
) -> bool {
    match model {
        SignalModel::Jsm2r => mu2 * mu2 + sigma2_sq > sigma1_sq,
        SignalModel::Jsm3r => sigma2_sq > sigma1_sq,
    }
}

// --- Results CSV -----------------------------------------------------------

pub const RESULTS_CSV_HEADER: &str =
    "algorithm,model,N,K,M,T,successes,trials,rate,ci_low,ci_high,hit_max_trials,seed";

/// One results row; floats print with round-trip formatting so parsing and
/// re-serializing a results file is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub algorithm: String,
    pub model: String,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hit_max_trials: bool,
    pub seed: u64,
}

impl CsvRecord {
    pub fn from_cell(grid: &GridSpec, cell: &CellResult) -> Self {
        Self {
            algorithm: grid.detector.algorithm.to_string(),
            model: grid.template.model.to_string(),
            n: grid.template.n_vars,
            k: cell.k,
            m: cell.m,
            t: cell.t,
            successes: cell.successes,
            trials: cell.trials,
            rate: cell.rate,
            ci_low: cell.ci_low,
            ci_high: cell.ci_high,
            hit_max_trials: cell.hit_max_trials,
            seed: grid.base_seed,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.model,
            self.n,
            self.k,
            self.m,
            self.t,
            self.successes,
            self.trials,
            self.rate,
            self.ci_low,
            self.ci_high,
            self.hit_max_trials,
            self.seed
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::Config(format!(
                "results row has {} fields, expected 13",
                fields.len()
            )));
        }
        let parse_err =
            |field: &str, what: &str| Error::Config(format!("results row: bad {what}: {field:?}"));
        Ok(Self {
            algorithm: fields[0].to_string(),
            model: fields[1].to_string(),
            n: fields[2].parse().map_err(|_| parse_err(fields[2], "N"))?,
            k: fields[3].parse().map_err(|_| parse_err(fields[3], "K"))?,
            m: fields[4].parse().map_err(|_| parse_err(fields[4], "M"))?,
            t: fields[5].parse().map_err(|_| parse_err(fields[5], "T"))?,
            successes: fields[6]
                .parse()
                .map_err(|_| parse_err(fields[6], "successes"))?,
            trials: fields[7]
                .parse()
                .map_err(|_| parse_err(fields[7], "trials"))?,
            rate: fields[8]
                .parse()
                .map_err(|_| parse_err(fields[8], "rate"))?,
            ci_low: fields[9]
                .parse()
                .map_err(|_| parse_err(fields[9], "ci_low"))?,
            ci_high: fields[10]
                .parse()
                .map_err(|_| parse_err(fields[10], "ci_high"))?,
            hit_max_trials: match fields[11] {
                "true" => true,
                "false" => false,
                other => return Err(parse_err(other, "hit_max_trials")),
            },
            seed: fields[12]
                .parse()
                .map_err(|_| parse_err(fields[12], "seed"))?,
        })
    }
}

/// Serializes a full results file (header plus one row per cell).
pub fn results_to_csv(grid: &GridSpec, cells: &[CellResult]) -> String {
    let mut out = String::from(RESULTS_CSV_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&CsvRecord::from_cell(grid, cell).to_line());
        out.push('\n');
    }
    out
}

/// Parses a results file produced by [`results_to_csv`].
pub fn parse_results_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_CSV_HEADER => {}
        _ => return Err(Error::Config("results csv: missing or wrong header".into())),
    }
    lines.map(CsvRecord::parse_line).collect()
}

/// Re-serializes parsed records; byte-identical to the original file.
pub fn records_to_csv(records: &[CsvRecord]) -> String {
    let mut out = String::from(RESULTS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
