//! The four subcommand implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use camd::detect::{
    estimate_k, somp_score_profile, Algorithm, DetectionResult, DetectorSpec, InnerKind,
};
use camd::experiment::{
    parse_results_csv, records_to_csv, run_cell, theory_separation_check, theory_xi_expectation,
    theory_xi_gap, CaseKind, CsvRecord, GridConfig, GridSpec, TheoryCase,
};
use camd::model::{measure, stack, MeasurementSet, ProblemConfig, SensingSequence, SignalModel};
use camd::rng::SeededRng;

use crate::heatmap::{write_heatmap, HeatmapSpec};
use crate::io::{
    ensure_dir, matrix_from_csv, matrix_to_csv, read_to_string, write_atomic, RunManifest,
};
use crate::CliError;

fn load_config_text(config: Option<&Path>, command: &str) -> Result<String, CliError> {
    let path = config
        .ok_or_else(|| CliError::Config(format!("{command}: --config <path> is required")))?;
    read_to_string(path)
}

fn parse_json<'de, T: Deserialize<'de>>(text: &'de str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

// --- generate ---------------------------------------------------------------

/// Config document for `generate`: the problem plus the sensing dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerateConfig {
    problem: ProblemConfig,
    #[serde(rename = "M")]
    m_per_step: usize,
    #[serde(rename = "T")]
    n_steps: usize,
    #[serde(default)]
    seed: Option<u64>,
}

pub fn generate(
    output_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let text = load_config_text(config, "generate")?;
    let cfg: GenerateConfig = parse_json(&text, "generate config")?;
    cfg.problem.validate()?;
    if cfg.m_per_step == 0 {
        return Err(CliError::Config("M: must be >= 1".into()));
    }
    if cfg.n_steps == 0 {
        return Err(CliError::Config("T: must be >= 1".into()));
    }
    let base_seed = seed.or(cfg.seed).unwrap_or(0);

    let mut rng = SeededRng::new(base_seed);
    let spec = cfg.problem.realize(&mut rng)?;
    let signals = camd::model::generate_signals(&spec, cfg.n_steps, &mut rng)?;
    let sensing = camd::model::draw_sensing(cfg.m_per_step, spec.n_vars, cfg.n_steps, &mut rng)?;
    let measurements = measure(&sensing, &signals)?;

    ensure_dir(output_dir)?;
    let config_echo =
        serde_json::to_value(&cfg).map_err(|e| CliError::Io(format!("config echo: {e}")))?;
    let mut manifest = RunManifest::new("generate", base_seed, config_echo);

    write_atomic(
        &output_dir.join("signals.csv"),
        matrix_to_csv("t", &signals.values).as_bytes(),
    )?;
    let (phi, _) = stack(&sensing, &measurements)?;
    write_atomic(
        &output_dir.join("sensing.csv"),
        matrix_to_csv("n", &phi).as_bytes(),
    )?;
    let mut meas_matrix = Array2::zeros((cfg.m_per_step, cfg.n_steps));
    for t in 0..cfg.n_steps {
        meas_matrix.column_mut(t).assign(measurements.step(t));
    }
    write_atomic(
        &output_dir.join("measurements.csv"),
        matrix_to_csv("t", &meas_matrix).as_bytes(),
    )?;

    manifest.outputs = vec![
        "signals.csv".into(),
        "sensing.csv".into(),
        "measurements.csv".into(),
    ];
    manifest.finished_at = Some(crate::io::now_rfc3339());
    manifest.write(output_dir)?;

    println!(
        "wrote signals.csv ({}x{}), sensing.csv ({}x{}), measurements.csv ({}x{}) to {}",
        spec.n_vars,
        cfg.n_steps,
        cfg.m_per_step * cfg.n_steps,
        spec.n_vars,
        cfg.m_per_step,
        cfg.n_steps,
        output_dir.display()
    );
    println!("anomaly_set: {}", spec.anomaly_set);
    Ok(())
}

// --- detect -----------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Detector: osga | somp | lasso | tecc | acie.
    #[arg(long)]
    algorithm: String,

    /// Number of anomalies to report.
    #[arg(short, long)]
    k: usize,

    /// Directory holding sensing.csv and measurements.csv (from `generate`).
    #[arg(long)]
    data_dir: PathBuf,

    /// Inner detector for tecc/acie: osga | somp | lasso.
    #[arg(long, default_value = "osga")]
    inner: String,

    /// ACIE refinement passes.
    #[arg(long, default_value_t = 5)]
    acie_iters: usize,

    /// Re-estimate the ACIE support between passes (experimental).
    #[arg(long, default_value_t = false)]
    reestimate: bool,

    /// LASSO regularization weight (default: 0.1 * ||phi^T y||_inf).
    #[arg(long)]
    lambda: Option<f64>,

    /// LASSO KKT tolerance.
    #[arg(long)]
    tol: Option<f64>,

    /// LASSO iteration cap.
    #[arg(long)]
    max_lasso_iters: Option<usize>,

    /// Also print the largest-gap estimate of the anomaly count.
    #[arg(long, default_value_t = false)]
    estimate_k: bool,
}

fn load_data(dir: &Path) -> Result<(MeasurementSet, SensingSequence), CliError> {
    let meas_matrix = matrix_from_csv(
        &read_to_string(&dir.join("measurements.csv"))?,
        "measurements.csv",
    )?;
    let phi = matrix_from_csv(&read_to_string(&dir.join("sensing.csv"))?, "sensing.csv")?;
    let m = meas_matrix.nrows();
    let t_len = meas_matrix.ncols();
    if phi.nrows() != m * t_len {
        return Err(CliError::Config(format!(
            "sensing.csv has {} rows but measurements imply M*T = {}*{}",
            phi.nrows(),
            m,
            t_len
        )));
    }
    let mut mats = Vec::with_capacity(t_len);
    let mut vecs: Vec<Array1<f64>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        mats.push(phi.slice(ndarray::s![t * m..(t + 1) * m, ..]).to_owned());
        vecs.push(meas_matrix.column(t).to_owned());
    }
    let sensing = SensingSequence::new(mats).map_err(CliError::from)?;
    let measurements = MeasurementSet::new(vecs).map_err(CliError::from)?;
    Ok((measurements, sensing))
}

fn build_detector(args: &DetectArgs) -> Result<DetectorSpec, CliError> {
    let algorithm = Algorithm::parse(&args.algorithm)?;
    let mut spec = DetectorSpec::new(algorithm);
    spec.inner = InnerKind::parse(&args.inner)?;
    spec.acie_iters = args.acie_iters;
    spec.acie_reestimate = args.reestimate;
    if let Some(lambda) = args.lambda {
        if lambda < 0.0 {
            return Err(CliError::Config(format!(
                "--lambda must be >= 0, got {lambda}"
            )));
        }
        spec.lasso.lambda = Some(lambda);
    }
    if let Some(tol) = args.tol {
        if tol <= 0.0 {
            return Err(CliError::Config(format!("--tol must be > 0, got {tol}")));
        }
        spec.lasso.tol = tol;
    }
    if let Some(iters) = args.max_lasso_iters {
        spec.lasso.max_iters = iters;
    }
    if spec.acie_iters == 0 {
        return Err(CliError::Config("--acie-iters must be >= 1".into()));
    }
    Ok(spec)
}

fn print_result(result: &DetectionResult, k_estimate: Option<usize>) {
    println!("{}", result.estimated_set);
    println!("algorithm: {}", result.algorithm);
    println!(
        "scores: {}",
        result
            .scores
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    );
    if let Some(khat) = k_estimate {
        println!("k_estimate: {khat}");
    }
    for (key, value) in result.diagnostics.iter() {
        println!("diag {key}: {value}");
    }
}

pub fn detect(args: &DetectArgs, _seed: Option<u64>) -> Result<(), CliError> {
    let detector = build_detector(args)?;
    let (measurements, sensing) = load_data(&args.data_dir)?;
    if args.k == 0 || args.k >= sensing.n_vars() {
        return Err(CliError::Config(format!(
            "--k must satisfy 1 <= k < N = {}, got {}",
            sensing.n_vars(),
            args.k
        )));
    }
    // Algorithm preconditions surface as usage errors before any work runs.
    if detector.algorithm == Algorithm::Acie && args.k >= sensing.m_per_step() {
        return Err(CliError::Config(format!(
            "acie requires k < M (k = {}, M = {}): the complement of the support's \
             sensing columns would be empty",
            args.k,
            sensing.m_per_step()
        )));
    }
    if detector.algorithm == Algorithm::Somp && args.k > sensing.m_per_step() {
        return Err(CliError::Config(format!(
            "somp requires k <= M (k = {}, M = {})",
            args.k,
            sensing.m_per_step()
        )));
    }

    let result = detector.run(&measurements, &sensing, args.k).map_err(|e| {
        eprintln!(
            "diag data: M={} T={} N={}",
            sensing.m_per_step(),
            sensing.n_steps(),
            sensing.n_vars()
        );
        CliError::Detection(e.to_string())
    })?;

    let k_estimate = if args.estimate_k {
        let profile_scores;
        let scores: &[f64] = if result.algorithm == Algorithm::Somp {
            // The gap estimate needs the pursuit statistic beyond the first
            // k picks, not just the k pick-time values.
            let picks = sensing.m_per_step().min(sensing.n_vars());
            profile_scores = somp_score_profile(&measurements, &sensing, picks)?;
            &profile_scores
        } else {
            &result.scores
        };
        Some(estimate_k(scores)?)
    } else {
        None
    };

    print_result(&result, k_estimate);

    if result.diagnostics.get("all_zero_solution") == Some("true") {
        eprintln!(
            "warning: all-zero solution (lambda {} is at or above ||phi^T y||_inf); \
             the reported set is the tie-break prefix",
            result.diagnostics.get("lambda").unwrap_or("?")
        );
        return Err(CliError::Detection("all-zero lasso solution".into()));
    }
    if result.diagnostics.get("nonconvergence") == Some("true") {
        eprintln!("warning: lasso stopped at its iteration cap; best iterate reported");
        return Err(CliError::Detection("lasso did not converge".into()));
    }
    Ok(())
}

// --- phase ------------------------------------------------------------------

pub fn phase(
    output_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let text = load_config_text(config, "phase")?;
    let mut cfg: GridConfig = parse_json(&text, "grid config")?;
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    let spec = cfg.clone().into_spec()?;
    let config_echo =
        serde_json::to_value(&cfg).map_err(|e| CliError::Io(format!("config echo: {e}")))?;

    ensure_dir(output_dir)?;

    // Resumption: an existing manifest must describe the same config; rows
    // already on disk are trusted as a prefix and only missing cells run.
    if let Some(existing) = RunManifest::load(output_dir)? {
        if existing.config != config_echo {
            return Err(CliError::Config(format!(
                "{} holds results for a different config; use a fresh --output-dir",
                output_dir.display()
            )));
        }
    }
    let mut manifest = RunManifest::new("phase", spec.base_seed, config_echo.clone());
    let mut outputs = Vec::new();
    for &k in &spec.k_values {
        outputs.push(format!("results_k{k}.csv"));
        outputs.push(format!("heatmap_k{k}.png"));
    }
    outputs.push("metadata.json".into());
    manifest.outputs = outputs;
    manifest.write(output_dir)?;

    let metadata = serde_json::json!({
        "config": config_echo,
        "version": env!("CARGO_PKG_VERSION"),
        "rng_algorithm": camd::rng::RNG_ALGORITHM,
    });
    write_atomic(
        &output_dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata)
            .map_err(|e| CliError::Io(format!("metadata: {e}")))?
            .as_bytes(),
    )?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;

    for &k in &spec.k_values {
        run_phase_for_k(output_dir, &spec, k, &pool)?;
    }

    manifest.finished_at = Some(crate::io::now_rfc3339());
    manifest.write(output_dir)?;
    println!("phase grid complete: {}", output_dir.display());
    Ok(())
}

/// Runs one K slice, flushing the results CSV after every M row so an
/// interrupted run resumes at row granularity.
fn run_phase_for_k(
    output_dir: &Path,
    spec: &GridSpec,
    k: usize,
    pool: &rayon::ThreadPool,
) -> Result<(), CliError> {
    let csv_path = output_dir.join(format!("results_k{k}.csv"));
    let expected: Vec<(usize, usize)> = spec
        .m_values
        .iter()
        .flat_map(|&m| spec.t_values.iter().map(move |&t| (m, t)))
        .collect();

    let mut records: Vec<CsvRecord> = Vec::with_capacity(expected.len());
    if csv_path.exists() {
        let existing = parse_results_csv(&read_to_string(&csv_path)?)?;
        for (record, &(m, t)) in existing.iter().zip(expected.iter()) {
            let matches = record.m == m
                && record.t == t
                && record.k == k
                && record.seed == spec.base_seed
                && record.algorithm == spec.detector.algorithm.to_string();
            if !matches {
                return Err(CliError::Config(format!(
                    "{}: existing rows do not match this grid; use a fresh --output-dir",
                    csv_path.display()
                )));
            }
            records.push(record.clone());
        }
    }

    let chunk = spec.t_values.len();
    while records.len() < expected.len() {
        let start = records.len();
        let end = (start + chunk - start % chunk).min(expected.len());
        let todo = &expected[start..end];
        let mut fresh: Vec<CsvRecord> = pool.install(|| {
            use rayon::prelude::*;
            todo.par_iter()
                .map(|&(m, t)| run_cell(spec, m, t, k).map(|c| CsvRecord::from_cell(spec, &c)))
                .collect::<Result<Vec<_>, _>>()
        })?;
        records.append(&mut fresh);
        write_atomic(&csv_path, records_to_csv(&records).as_bytes())?;
    }

    let title = format!(
        "{} {} N={} K={k}",
        spec.detector.algorithm, spec.template.model, spec.template.n_vars
    );
    let caption = format!(
        "success rate of exact anomaly-set recovery by (M, T); each cell stopped once its \
         {:.0}% Jeffreys interval was narrower than {} (or at {} trials); base seed {}",
        spec.confidence * 100.0,
        spec.target_width,
        spec.max_trials,
        spec.base_seed
    );
    let rate_lookup = |m: usize, t: usize| -> f64 {
        records
            .iter()
            .find(|r| r.m == m && r.t == t)
            .map(|r| r.rate)
            .unwrap_or(0.0)
    };
    write_heatmap(
        &output_dir.join(format!("heatmap_k{k}.png")),
        &HeatmapSpec {
            m_values: &spec.m_values,
            t_values: &spec.t_values,
            rates: &rate_lookup,
            title,
            caption,
        },
    )?;
    Ok(())
}

// --- theory -----------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Signal model: jsm2r | jsm3r.
    #[arg(long)]
    model: String,

    #[arg(long)]
    n: usize,

    #[arg(long)]
    k: usize,

    #[arg(long)]
    m: usize,

    /// Anomalous mean.
    #[arg(long)]
    mu2: f64,

    /// Prevalent variance.
    #[arg(long)]
    sigma1_sq: f64,

    /// Anomalous variance.
    #[arg(long)]
    sigma2_sq: f64,
}

pub fn theory(args: &TheoryArgs) -> Result<(), CliError> {
    let model = SignalModel::parse(&args.model)?;
    if args.k == 0 || args.k >= args.n {
        return Err(CliError::Config(format!(
            "--k must satisfy 1 <= k < n, got k={}, n={}",
            args.k, args.n
        )));
    }
    if args.m == 0 {
        return Err(CliError::Config("--m must be >= 1".into()));
    }
    if args.sigma1_sq < 0.0 || args.sigma2_sq < 0.0 {
        return Err(CliError::Config("variances must be >= 0".into()));
    }
    let base = TheoryCase {
        n: args.n,
        k: args.k,
        m: args.m,
        mu2: args.mu2,
        sigma2_sq: args.sigma2_sq,
        sigma1_sq: args.sigma1_sq,
        case: CaseKind::Prevalent,
    };
    let prevalent = theory_xi_expectation(&base);
    let anomalous = theory_xi_expectation(&TheoryCase {
        case: CaseKind::Anomalous,
        ..base
    });
    let gap = theory_xi_gap(args.m, args.mu2, args.sigma2_sq, args.sigma1_sq);
    let separated = theory_separation_check(model, args.mu2, args.sigma2_sq, args.sigma1_sq);
    println!("prevalent: {prevalent}");
    println!("anomalous: {anomalous}");
    println!("difference: {gap}");
    println!("separation: {separated}");
    Ok(())
}
