//! Patient-line survival records, covariate laws and the mixture-of-Cox
//! scenario generator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One patient line: observed time, event flag and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub time: f64,
    /// `true` for an observed event, `false` for a censored time.
    pub event: bool,
    pub covariates: Vec<f64>,
    pub trial_id: String,
}

/// A nonempty set of records sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub label: String,
    subjects: Vec<SubjectRecord>,
}

impl TrialDataset {
    pub fn new(label: impl Into<String>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let label = label.into();
        let Some(first) = subjects.first() else {
            return invalid(format!("dataset `{label}` has no records"));
        };
        let k = first.covariates.len();
        for s in &subjects {
            if s.covariates.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: s.covariates.len(),
                });
            }
            if !(s.time.is_finite() && s.time >= 0.0) {
                return invalid(format!("time {} is not a finite non-negative number", s.time));
            }
            if s.covariates.iter().any(|z| !z.is_finite()) {
                return invalid("covariates must be finite");
            }
        }
        Ok(TrialDataset { label, subjects })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<SubjectRecord> {
        self.subjects
    }

    /// Covariate dimension `k`.
    pub fn dim(&self) -> usize {
        self.subjects[0].covariates.len()
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    /// Event counts keyed by `trial_id`.
    pub fn events_by_trial(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.subjects {
            *out.entry(s.trial_id.clone()).or_insert(0) += usize::from(s.event);
        }
        out
    }
}

/// Concatenates datasets, keeping each record's `trial_id`.
pub fn pool(trials: &[TrialDataset]) -> Result<TrialDataset> {
    let Some(first) = trials.first() else {
        return invalid("nothing to pool");
    };
    if trials.len() == 1 {
        return Ok(first.clone());
    }
    let k = first.dim();
    let mut subjects = Vec::with_capacity(trials.iter().map(TrialDataset::len).sum());
    for t in trials {
        if t.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: t.dim(),
            });
        }
        subjects.extend_from_slice(&t.subjects);
    }
    TrialDataset::new("pooled", subjects)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub z: Vec<f64>,
    pub prob: f64,
}

/// Finite discrete law of the covariate vector `Z`, shared by all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct CovariateDistribution {
    support: Vec<SupportPoint>,
}

#[derive(Deserialize)]
struct RawDistribution {
    support: Vec<SupportPoint>,
}

impl TryFrom<RawDistribution> for CovariateDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        CovariateDistribution::new(raw.support)
    }
}

impl CovariateDistribution {
    pub fn new(support: Vec<SupportPoint>) -> Result<Self> {
        let Some(first) = support.first() else {
            return invalid("covariate distribution needs at least one support point");
        };
        let k = first.z.len();
        let mut total = 0.0;
        for (i, pt) in support.iter().enumerate() {
            if pt.z.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: pt.z.len(),
                });
            }
            if pt.z.iter().any(|v| !v.is_finite()) {
                return invalid("support points must be finite");
            }
            if !(pt.prob > 0.0) {
                return invalid(format!("support probability {} is not positive", pt.prob));
            }
            if support[..i].iter().any(|other| other.z == pt.z) {
                return invalid(format!("duplicate support point {:?}", pt.z));
            }
            total += pt.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("support probabilities sum to {total}, not 1"));
        }
        Ok(CovariateDistribution { support })
    }

    /// Arm indicator `Z ~ Bernoulli(q)`.
    pub fn bernoulli(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return invalid(format!("arm probability {q} must lie in (0, 1)"));
        }
        Self::new(vec![
            SupportPoint {
                z: vec![0.0],
                prob: 1.0 - q,
            },
            SupportPoint { z: vec![1.0], prob: q },
        ])
    }

    /// Uniform law on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let p = 1.0 / points.len().max(1) as f64;
        Self::new(points.into_iter().map(|z| SupportPoint { z, prob: p }).collect())
    }

    /// Empirical law of the covariate vectors in `subjects`.
    pub fn empirical(subjects: &[SubjectRecord]) -> Result<Self> {
        if subjects.is_empty() {
            return invalid("no records to tabulate");
        }
        let mut counts: BTreeMap<Vec<u64>, (Vec<f64>, usize)> = BTreeMap::new();
        for s in subjects {
            let key = s.covariates.iter().map(|v| v.to_bits()).collect();
            counts.entry(key).or_insert_with(|| (s.covariates.clone(), 0)).1 += 1;
        }
        let n = subjects.len() as f64;
        let mut support: Vec<SupportPoint> = counts
            .into_values()
            .map(|(z, c)| SupportPoint { z, prob: c as f64 / n })
            .collect();
        support.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap_or(std::cmp::Ordering::Equal));
        let total: f64 = support.iter().map(|p| p.prob).sum();
        for p in &mut support {
            p.prob /= total;
        }
        Self::new(support)
    }

    pub fn support(&self) -> &[SupportPoint] {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support[0].z.len()
    }

    /// `E(Z)`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for pt in &self.support {
            for (mj, zj) in m.iter_mut().zip(&pt.z) {
                *mj += pt.prob * zj;
            }
        }
        m
    }

    /// `E[g(Z)]` for scalar `g`.
    pub fn expect<G: Fn(&[f64]) -> f64>(&self, g: G) -> f64 {
        self.support.iter().map(|pt| pt.prob * g(&pt.z)).sum()
    }

    /// `Some(q)` when this is the arm-indicator law on `{0, 1}`.
    pub fn binary_arm_prob(&self) -> Option<f64> {
        if self.dim() != 1 || self.support.len() != 2 {
            return None;
        }
        let one = self.support.iter().find(|p| p.z[0] == 1.0)?;
        self.support.iter().find(|p| p.z[0] == 0.0)?;
        Some(one.prob)
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pt) in self.support.iter().enumerate() {
            acc += pt.prob;
            if u < acc {
                return i;
            }
        }
        self.support.len() - 1
    }

    /// Deterministic counts `round(size · prob)` by largest remainder.
    fn fixed_counts(&self, size: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.support.iter().map(|p| p.prob * size as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut short = size - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&i, &j| {
            (raw[j] - raw[j].floor())
                .total_cmp(&(raw[i] - raw[i].floor()))
                .then(i.cmp(&j))
        });
        for i in order {
            if short == 0 {
                break;
            }
            counts[i] += 1;
            short -= 1;
        }
        counts
    }
}

/// Censoring mechanism applied independently to each record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringScheme {
    #[default]
    None,
    /// Every subject is censored at study end `t_max`.
    Administrative { t_max: f64 },
    /// Censoring times `C ~ Exp(rate)`.
    IndependentExponential { rate: f64 },
}

impl CensoringScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CensoringScheme::None => Ok(()),
            CensoringScheme::Administrative { t_max } if t_max > 0.0 => Ok(()),
            CensoringScheme::IndependentExponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            other => invalid(format!("censoring parameters must be positive: {other:?}")),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CensoringScheme::None => f64::INFINITY,
            CensoringScheme::Administrative { t_max } => t_max,
            CensoringScheme::IndependentExponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }
}

/// Baseline cumulative hazard `H₀`, used through its inverse by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// `H₀(t) = t`, i.e. an Exp(1) baseline.
    #[default]
    Identity,
    /// `H₀(t) = rate · t`.
    Exponential { rate: f64 },
    /// `H₀(t) = (t / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Baseline::Identity => true,
            Baseline::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Baseline::Weibull { shape, scale } => shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("baseline parameters must be positive: {self:?}"))
        }
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            Baseline::Identity => t,
            Baseline::Exponential { rate } => rate * t,
            Baseline::Weibull { shape, scale } => (t / scale).powf(shape),
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        match *self {
            Baseline::Identity => u,
            Baseline::Exponential { rate } => u / rate,
            Baseline::Weibull { shape, scale } => scale * u.powf(1.0 / shape),
        }
    }
}

/// How covariates are assigned within a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Each subject's covariates drawn independently from the law.
    #[default]
    Random,
    /// Exactly `round(size · prob)` subjects per support point (e.g. 1:1 randomisation).
    Fixed,
}

/// Generative description of a multi-trial Monte Carlo scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Per-trial log hazard ratio vectors.
    pub trial_effects: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub covariate_dist: CovariateDistribution,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub censoring: CensoringScheme,
    pub seed: u64,
    #[serde(default)]
    pub allocation: Allocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ScenarioSpec {
    /// Two trials with arm indicator `Z ~ Bernoulli(q)` and hazard ratios `a`, `b`.
    pub fn two_arm(a: f64, b: f64, sizes: [usize; 2], q: f64, seed: u64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return invalid("hazard ratios must be positive");
        }
        let spec = ScenarioSpec {
            trial_effects: vec![vec![a.ln()], vec![b.ln()]],
            sizes: sizes.to_vec(),
            covariate_dist: CovariateDistribution::bernoulli(q)?,
            baseline: Baseline::Identity,
            censoring: CensoringScheme::None,
            seed,
            allocation: Allocation::Fixed,
            labels: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial_effects.len() < 2 {
            return invalid("a scenario needs at least two trials");
        }
        if self.sizes.len() != self.trial_effects.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trial_effects.len(),
                found: self.sizes.len(),
            });
        }
        if self.sizes.contains(&0) {
            return invalid("trial sizes must be positive");
        }
        let k = self.covariate_dist.dim();
        for e in &self.trial_effects {
            if e.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: e.len(),
                });
            }
            if e.iter().any(|v| !v.is_finite()) {
                return invalid("trial effects must be finite");
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.sizes.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.sizes.len(),
                    found: labels.len(),
                });
            }
        }
        self.baseline.validate()?;
        self.censoring.validate()
    }

    pub fn label(&self, trial: usize) -> String {
        match &self.labels {
            Some(l) => l[trial].clone(),
            None => format!("trial{}", trial + 1),
        }
    }

    /// Share of the first trial in the pooled sample, `n / (n + m)`.
    pub fn mixing_p(&self) -> f64 {
        self.sizes[0] as f64 / self.sizes.iter().sum::<usize>() as f64
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ScenarioSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Independent generator for stream `stream` of master seed `seed`.
///
/// ChaCha's 64-bit stream id keeps replicate `r` on its own sequence regardless
/// of which worker runs it.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub covariates: Vec<f64>,
    pub event_time: f64,
    pub censor_time: f64,
}

/// Simulated trial before censoring is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrial {
    pub label: String,
    pub records: Vec<LatentRecord>,
}

impl LatentTrial {
    /// Observed data under the drawn censoring times, additionally cut at `horizon`.
    pub fn observe(&self, horizon: f64) -> TrialDataset {
        let subjects = self
            .records
            .iter()
            .map(|r| {
                let limit = r.censor_time.min(horizon);
                let event = r.event_time <= limit;
                SubjectRecord {
                    time: if event { r.event_time } else { limit },
                    event,
                    covariates: r.covariates.clone(),
                    trial_id: self.label.clone(),
                }
            })
            .collect();
        TrialDataset {
            label: self.label.clone(),
            subjects,
        }
    }
}

/// Options shared by every trial of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulationOptions {
    pub baseline: Baseline,
    pub censoring: CensoringScheme,
    pub allocation: Allocation,
}

/// Draws latent event and censoring times by inverse transform,
/// `T = H₀⁻¹(E / exp(effect'Z))` with `E ~ Exp(1)`.
pub fn simulate_latent<R: Rng + ?Sized>(
    label: &str,
    effect: &[f64],
    size: usize,
    dist: &CovariateDistribution,
    opts: &SimulationOptions,
    rng: &mut R,
) -> LatentTrial {
    let fixed = match opts.allocation {
        Allocation::Fixed => Some(dist.fixed_counts(size)),
        Allocation::Random => None,
    };
    let mut fixed_iter = fixed
        .iter()
        .flat_map(|counts| counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)));
    let mut records = Vec::with_capacity(size);
    for _ in 0..size {
        let idx = match fixed_iter.next() {
            Some(i) => i,
            None => dist.sample_index(rng),
        };
        let z = &dist.support()[idx].z;
        let lp: f64 = effect.iter().zip(z).map(|(b, zj)| b * zj).sum();
        let e: f64 = Exp1.sample(rng);
        let event_time = opts.baseline.inverse(e / lp.exp());
        let censor_time = opts.censoring.draw(rng);
        records.push(LatentRecord {
            covariates: z.clone(),
            event_time,
            censor_time,
        });
    }
    LatentTrial {
        label: label.to_string(),
        records,
    }
}

/// One simulated trial with censoring applied.
pub fn simulate_trial<R: Rng + ?Sized>(
    label: &str,
    effect: &[f64],
    size: usize,
    dist: &CovariateDistribution,
    opts: &SimulationOptions,
    rng: &mut R,
) -> TrialDataset {
    simulate_latent(label, effect, size, dist, opts, rng).observe(f64::INFINITY)
}

impl ScenarioSpec {
    fn options(&self) -> SimulationOptions {
        SimulationOptions {
            baseline: self.baseline,
            censoring: self.censoring,
            allocation: self.allocation,
        }
    }

    /// All trials of replicate `stream`, before any horizon cut.
    pub fn simulate_latent(&self, stream: u64) -> Vec<LatentTrial> {
        let mut rng = stream_rng(self.seed, stream);
        let opts = self.options();
        self.trial_effects
            .iter()
            .zip(&self.sizes)
            .enumerate()
            .map(|(i, (effect, &n))| simulate_latent(&self.label(i), effect, n, &self.covariate_dist, &opts, &mut rng))
            .collect()
    }

    /// All trials of replicate `stream` under the scenario's censoring.
    pub fn simulate(&self, stream: u64) -> Vec<TrialDataset> {
        self.simulate_latent(stream)
            .iter()
            .map(|t| t.observe(f64::INFINITY))
            .collect()
    }
}

const ID_COLUMN: &str = "trial_id";
const TIME_COLUMN: &str = "time";
const EVENT_COLUMN: &str = "event";

/// Reads patient lines (`trial_id,time,event,z1,...,zk`), grouping by `trial_id`
/// in order of first appearance.
pub fn read_patient_csv_from<R: Read>(reader: R) -> Result<Vec<TrialDataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let id_col = find(ID_COLUMN);
    let time_col = find(TIME_COLUMN);
    let event_col = find(EVENT_COLUMN);
    for (name, col) in [(ID_COLUMN, id_col), (TIME_COLUMN, time_col), (EVENT_COLUMN, event_col)] {
        if col.is_none() {
            missing.push(name.to_string());
        }
    }
    let mut z_cols = Vec::new();
    let mut max_z = 0;
    for (i, h) in headers.iter().enumerate() {
        if [ID_COLUMN, TIME_COLUMN, EVENT_COLUMN].contains(&h.as_str()) {
            continue;
        }
        match h
            .strip_prefix('z')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&j| j >= 1)
        {
            Some(j) => {
                z_cols.push((j, i));
                max_z = max_z.max(j);
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected column `{h}`"),
                })
            }
        }
    }
    z_cols.sort();
    for j in 1..=max_z {
        if !z_cols.iter().any(|&(c, _)| c == j) {
            missing.push(format!("z{j}"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema { missing });
    }
    let (id_col, time_col, event_col) = (id_col.unwrap(), time_col.unwrap(), event_col.unwrap());

    let mut groups: Vec<(String, Vec<SubjectRecord>)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let trial_id = field(id_col).to_string();
        if trial_id.is_empty() {
            return Err(parse_err("empty trial_id".into()));
        }
        let time: f64 = field(time_col)
            .parse()
            .map_err(|_| parse_err(format!("time `{}` is not a number", field(time_col))))?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(parse_err(format!("time {time} must be finite and non-negative")));
        }
        let event = match field(event_col) {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("event `{other}` must be 0 or 1"))),
        };
        let covariates = z_cols
            .iter()
            .map(|&(j, i)| {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("z{j} `{}` is not a finite number", field(i))))
            })
            .collect::<Result<Vec<f64>>>()?;
        let record = SubjectRecord {
            time,
            event,
            covariates,
            trial_id: trial_id.clone(),
        };
        match groups.iter_mut().find(|(id, _)| *id == trial_id) {
            Some((_, v)) => v.push(record),
            None => groups.push((trial_id, vec![record])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "file contains no patient lines".into(),
        });
    }
    groups
        .into_iter()
        .map(|(id, subjects)| TrialDataset::new(id, subjects))
        .collect()
}

pub fn read_patient_csv(path: &Path) -> Result<Vec<TrialDataset>> {
    read_patient_csv_from(std::fs::File::open(path)?)
}

pub fn write_patient_csv_to<W: Write>(datasets: &[TrialDataset], writer: W) -> Result<()> {
    let k = datasets.first().map(TrialDataset::dim).unwrap_or(0);
    if let Some(bad) = datasets.iter().find(|d| d.dim() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: bad.dim(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![ID_COLUMN.to_string(), TIME_COLUMN.to_string(), EVENT_COLUMN.to_string()];
    header.extend((1..=k).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for d in datasets {
        for s in d.subjects() {
            let mut row = vec![s.trial_id.clone(), s.time.to_string(), u8::from(s.event).to_string()];
            row.extend(s.covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_patient_csv(datasets: &[TrialDataset], path: &Path) -> Result<()> {
    write_patient_csv_to(datasets, std::fs::File::create(path)?)
}
