//! Problem definition and data generation: anomaly sets, JSM-2R / JSM-3R
//! signal ensembles, Gaussian sensing matrices, and measurements.
//!
//! Indices are 1-based in every external format (configs, CSV, CLI output);
//! [`IndexSet`] stores 0-based positions internally and converts at the
//! serialization boundary.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Sorted, duplicate-free set of variable indices (0-based internally).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Builds from 0-based indices; sorts and rejects duplicates.
    pub fn from_zero_based(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("index set contains duplicates".into()));
        }
        Ok(Self(indices))
    }

    /// Builds from 1-based indices as they appear in external formats.
    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::Domain("1-based index set contains 0".into()));
        }
        Self::from_zero_based(indices.iter().map(|&i| i - 1).collect())
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&i| i + 1).collect()
    }

    /// 0-based indices, sorted ascending.
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Largest 0-based index, if any.
    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

/// Displays 1-based, space-separated: the external convention.
impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for i in self.to_one_based() {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        Ok(())
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<usize>::deserialize(deserializer)?;
        IndexSet::from_one_based(&raw).map_err(D::Error::custom)
    }
}

/// Mean/variance pair for one Gaussian. Zero variance is legal and denotes
/// the degenerate point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub var: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        let g = Self { mean, var };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.var.is_finite() {
            return Err(Error::Domain("gaussian parameters must be finite".into()));
        }
        if self.var < 0.0 {
            return Err(Error::Domain(format!(
                "variance must be >= 0, got {}",
                self.var
            )));
        }
        Ok(())
    }
}

/// Signal-model tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalModel {
    Jsm2r,
    Jsm3r,
}

impl SignalModel {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "jsm2r" => Ok(Self::Jsm2r),
            "jsm3r" => Ok(Self::Jsm3r),
            other => Err(Error::Config(format!(
                "model: unknown value {other:?} (expected \"jsm2r\" or \"jsm3r\")"
            ))),
        }
    }
}

impl fmt::Display for SignalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jsm2r => "jsm2r",
            Self::Jsm3r => "jsm3r",
        })
    }
}

/// Fully specified detection problem: dimensions, anomaly set, and the
/// prevalent/anomalous distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n_vars: usize,
    pub anomaly_set: IndexSet,
    pub prevalent: GaussianSpec,
    pub anomalous: GaussianSpec,
    pub model: SignalModel,
}

impl ProblemSpec {
    pub fn new(
        n_vars: usize,
        anomaly_set: IndexSet,
        prevalent: GaussianSpec,
        anomalous: GaussianSpec,
        model: SignalModel,
    ) -> Result<Self> {
        prevalent.validate()?;
        anomalous.validate()?;
        let k = anomaly_set.len();
        if k == 0 || k >= n_vars {
            return Err(Error::Dimension(format!(
                "need 1 <= K < N, got K={k}, N={n_vars}"
            )));
        }
        if anomaly_set.max().is_some_and(|i| i >= n_vars) {
            return Err(Error::Dimension("anomaly index out of range".into()));
        }
        Ok(Self {
            n_vars,
            anomaly_set,
            prevalent,
            anomalous,
            model,
        })
    }

    pub fn n_anomalies(&self) -> usize {
        self.anomaly_set.len()
    }

    /// Component-wise mean of the random vector `X`.
    pub fn expected_signal(&self) -> Array1<f64> {
        let mut e = Array1::from_elem(self.n_vars, self.prevalent.mean);
        for i in self.anomaly_set.iter() {
            e[i] = self.anomalous.mean;
        }
        e
    }
}

/// Realization matrix, one column per time-step (`n_vars` x `n_steps`).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalEnsemble {
    pub values: Array2<f64>,
    pub spec: ProblemSpec,
}

impl SignalEnsemble {
    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }
}

/// The per-step sensing matrices, each `m_per_step` x `n_vars`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSequence {
    mats: Vec<Array2<f64>>,
}

impl SensingSequence {
    /// Wraps pre-built matrices, checking uniform shapes.
    pub fn new(mats: Vec<Array2<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::Dimension("sensing sequence must have T >= 1".into()));
        }
        let shape = mats[0].dim();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Dimension(
                "sensing matrices must be non-empty".into(),
            ));
        }
        if mats.iter().any(|m| m.dim() != shape) {
            return Err(Error::Dimension(
                "sensing matrices must share one shape".into(),
            ));
        }
        Ok(Self { mats })
    }

    pub fn m_per_step(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn n_steps(&self) -> usize {
        self.mats.len()
    }

    pub fn step(&self, t: usize) -> &Array2<f64> {
        &self.mats[t]
    }

    pub fn steps(&self) -> &[Array2<f64>] {
        &self.mats
    }
}

/// Measurement vectors `y_t`, each of length `m_per_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    vecs: Vec<Array1<f64>>,
}

impl MeasurementSet {
    pub fn new(vecs: Vec<Array1<f64>>) -> Result<Self> {
        if vecs.is_empty() {
            return Err(Error::Dimension("measurement set must have T >= 1".into()));
        }
        let m = vecs[0].len();
        if m == 0 {
            return Err(Error::Dimension("measurements must be non-empty".into()));
        }
        if vecs.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension(
                "measurements must share one length".into(),
            ));
        }
        Ok(Self { vecs })
    }

    pub fn m_per_step(&self) -> usize {
        self.vecs[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.vecs.len()
    }

    pub fn step(&self, t: usize) -> &Array1<f64> {
        &self.vecs[t]
    }

    pub fn steps(&self) -> &[Array1<f64>] {
        &self.vecs
    }
}

/// Draws a uniform K-subset of `{1..n_vars}` (returned 0-based) with Floyd's
/// algorithm, so every subset has probability `1/C(N,K)`.
pub fn sample_anomaly_set(
    n_vars: usize,
    n_anomalies: usize,
    rng: &mut SeededRng,
) -> Result<IndexSet> {
    if n_anomalies < 1 || n_anomalies >= n_vars {
        return Err(Error::Dimension(format!(
            "need 1 <= K < N, got K={n_anomalies}, N={n_vars}"
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(n_anomalies);
    for j in (n_vars - n_anomalies)..n_vars {
        let t = rng.below(j + 1);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    IndexSet::from_zero_based(chosen)
}

fn generate(spec: &ProblemSpec, n_steps: usize, rng: &mut SeededRng) -> Result<SignalEnsemble> {
    if n_steps == 0 {
        return Err(Error::Dimension("need T >= 1".into()));
    }
    let n = spec.n_vars;
    let mut values = Array2::zeros((n, n_steps));
    for row in 0..n {
        let dist = if spec.anomaly_set.contains(row) {
            spec.anomalous
        } else {
            spec.prevalent
        };
        for t in 0..n_steps {
            values[(row, t)] = rng.normal(dist.mean, dist.var);
        }
    }
    Ok(SignalEnsemble {
        values,
        spec: spec.clone(),
    })
}

/// JSM-2R ensemble: entry `(n, t)` is an i.i.d. draw from the anomalous
/// distribution when `n` is in the anomaly set, from the prevalent one
/// otherwise.
pub fn generate_jsm2r(
    spec: &ProblemSpec,
    n_steps: usize,
    rng: &mut SeededRng,
) -> Result<SignalEnsemble> {
    if spec.model != SignalModel::Jsm2r {
        return Err(Error::ModelMismatch {
            expected: SignalModel::Jsm2r,
            actual: spec.model,
        });
    }
    generate(spec, n_steps, rng)
}

/// JSM-3R ensemble: per-variable constant common component (the distribution
/// mean) plus a zero-mean Gaussian innovation whose variance depends on
/// whether the variable is anomalous. Numerically this produces the same
/// per-entry Gaussians as JSM-2R; the tag records the intended decomposition.
pub fn generate_jsm3r(
    spec: &ProblemSpec,
    n_steps: usize,
    rng: &mut SeededRng,
) -> Result<SignalEnsemble> {
    if spec.model != SignalModel::Jsm3r {
        return Err(Error::ModelMismatch {
            expected: SignalModel::Jsm3r,
            actual: spec.model,
        });
    }
    generate(spec, n_steps, rng)
}

/// Generates an ensemble according to `spec.model`.
pub fn generate_signals(
    spec: &ProblemSpec,
    n_steps: usize,
    rng: &mut SeededRng,
) -> Result<SignalEnsemble> {
    match spec.model {
        SignalModel::Jsm2r => generate_jsm2r(spec, n_steps, rng),
        SignalModel::Jsm3r => generate_jsm3r(spec, n_steps, rng),
    }
}

/// Draws `n_steps` sensing matrices with i.i.d. standard-normal entries.
pub fn draw_sensing(
    m_per_step: usize,
    n_vars: usize,
    n_steps: usize,
    rng: &mut SeededRng,
) -> Result<SensingSequence> {
    if m_per_step == 0 || n_vars == 0 || n_steps == 0 {
        return Err(Error::Dimension(format!(
            "need M, N, T >= 1, got M={m_per_step}, N={n_vars}, T={n_steps}"
        )));
    }
    let mats = (0..n_steps)
        .map(|_| {
            let mut m = Array2::zeros((m_per_step, n_vars));
            for v in m.iter_mut() {
                *v = rng.standard_normal();
            }
            m
        })
        .collect();
    SensingSequence::new(mats)
}

/// Applies the sensing matrices: `y_t = phi_t x_(.,t)` for every step.
pub fn measure(sensing: &SensingSequence, signals: &SignalEnsemble) -> Result<MeasurementSet> {
    if sensing.n_vars() != signals.n_vars() {
        return Err(Error::Dimension(format!(
            "sensing has N={}, signals have N={}",
            sensing.n_vars(),
            signals.n_vars()
        )));
    }
    if sensing.n_steps() != signals.n_steps() {
        return Err(Error::Dimension(format!(
            "sensing has T={}, signals have T={}",
            sensing.n_steps(),
            signals.n_steps()
        )));
    }
    let vecs = (0..sensing.n_steps())
        .map(|t| {
            let col = signals.values.column(t);
            sensing.step(t).dot(&col)
        })
        .collect();
    MeasurementSet::new(vecs)
}

/// Vertically concatenates the sensing matrices and measurement vectors in
/// time order: row block `t` of the stacked matrix is `phi_t`.
pub fn stack(
    sensing: &SensingSequence,
    measurements: &MeasurementSet,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if sensing.n_steps() != measurements.n_steps()
        || sensing.m_per_step() != measurements.m_per_step()
    {
        return Err(Error::Dimension(
            "sensing and measurements disagree on M or T".into(),
        ));
    }
    let (m, n, t_len) = (sensing.m_per_step(), sensing.n_vars(), sensing.n_steps());
    let mut phi = Array2::zeros((m * t_len, n));
    let mut y = Array1::zeros(m * t_len);
    for t in 0..t_len {
        for r in 0..m {
            let dst = t * m + r;
            phi.row_mut(dst).assign(&sensing.step(t).row(r));
            y[dst] = measurements.step(t)[r];
        }
    }
    Ok((phi, y))
}

/// JSON problem document: `{N, K, model, prevalent, anomalous}` with an
/// optional explicit 1-based `anomaly_set` (drawn from the seed otherwise).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: String,
    pub prevalent: GaussianSpec,
    pub anomalous: GaussianSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_set: Option<Vec<usize>>,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<SignalModel> {
        if self.n < 2 {
            return Err(Error::Config(format!("N: must be >= 2, got {}", self.n)));
        }
        if self.k < 1 || self.k >= self.n {
            return Err(Error::Config(format!(
                "K: must satisfy 1 <= K < N, got K={}, N={}",
                self.k, self.n
            )));
        }
        let model = SignalModel::parse(&self.model)?;
        self.prevalent
            .validate()
            .map_err(|e| Error::Config(format!("prevalent: {e}")))?;
        self.anomalous
            .validate()
            .map_err(|e| Error::Config(format!("anomalous: {e}")))?;
        if let Some(raw) = &self.anomaly_set {
            let set = IndexSet::from_one_based(raw)
                .map_err(|e| Error::Config(format!("anomaly_set: {e}")))?;
            if set.len() != self.k {
                return Err(Error::Config(format!(
                    "anomaly_set: has {} indices but K={}",
                    set.len(),
                    self.k
                )));
            }
            if set.max().is_some_and(|i| i >= self.n) {
                return Err(Error::Config("anomaly_set: index exceeds N".into()));
            }
        }
        Ok(model)
    }

    /// Materializes a [`ProblemSpec`], drawing the anomaly set from `rng`
    /// when the config leaves it open.
    pub fn realize(&self, rng: &mut SeededRng) -> Result<ProblemSpec> {
        let model = self.validate()?;
        let set = match &self.anomaly_set {
            Some(raw) => IndexSet::from_one_based(raw)?,
            None => sample_anomaly_set(self.n, self.k, rng)?,
        };
        ProblemSpec::new(self.n, set, self.prevalent, self.anomalous, model)
    }
}
