//! Subject-level and aggregate data.

use crate::error::{Error, Result};
use crate::numerics::special::logit;
use crate::numerics::RngStream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

/// Where a subject came from. Indicator encoding Z = (Z₁, Z₂).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceLabel {
    Current,
    External,
    #[serde(rename = "rwd")]
    RealWorld,
}

impl SourceLabel {
    pub const ALL: [SourceLabel; 3] = [
        SourceLabel::Current,
        SourceLabel::External,
        SourceLabel::RealWorld,
    ];

    /// (Z₁, Z₂): RealWorld = (1,0), External = (0,1), Current = (0,0).
    pub fn indicator(self) -> (u8, u8) {
        match self {
            SourceLabel::Current => (0, 0),
            SourceLabel::External => (0, 1),
            SourceLabel::RealWorld => (1, 0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            SourceLabel::Current => 0,
            SourceLabel::External => 1,
            SourceLabel::RealWorld => 2,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            SourceLabel::Current => "current",
            SourceLabel::External => "external",
            SourceLabel::RealWorld => "rwd",
        }
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SourceLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" => Ok(SourceLabel::Current),
            "external" => Ok(SourceLabel::External),
            "rwd" | "realworld" | "real_world" => Ok(SourceLabel::RealWorld),
            other => Err(format!(
                "unknown source '{other}' (expected current, external or rwd)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Treatment, Arm::Control];

    pub fn index(self) -> usize {
        match self {
            Arm::Treatment => 0,
            Arm::Control => 1,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "treatment" | "t" => Ok(Arm::Treatment),
            "control" | "c" => Ok(Arm::Control),
            other => Err(format!(
                "unknown arm '{other}' (expected treatment or control)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub source: SourceLabel,
    pub arm: Arm,
    pub covariates: Vec<f64>,
    pub outcome: bool,
    pub propensity: Option<f64>,
    pub stratum: Option<usize>,
}

impl Subject {
    pub fn new(source: SourceLabel, arm: Arm, covariates: Vec<f64>, outcome: bool) -> Result<Self> {
        if source == SourceLabel::RealWorld && arm == Arm::Control {
            return Err(Error::validation(
                "real-world subjects must be in the treatment arm",
            ));
        }
        Ok(Self {
            source,
            arm,
            covariates,
            outcome,
            propensity: None,
            stratum: None,
        })
    }
}

/// Responder count `y` out of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinomialSummary {
    pub y: u64,
    pub n: u64,
}

impl BinomialSummary {
    pub fn new(y: u64, n: u64) -> Result<Self> {
        if y > n {
            return Err(Error::validation(format!("responders {y} exceed size {n}")));
        }
        Ok(Self { y, n })
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn p(&self) -> Option<f64> {
        (self.n > 0).then(|| self.y as f64 / self.n as f64)
    }

    /// Log-odds; defined only when 0 < y < n.
    pub fn theta(&self) -> Option<f64> {
        (self.y > 0 && self.y < self.n).then(|| logit(self.y as f64 / self.n as f64))
    }

    /// Log-odds with ½ added to both cells, always finite for n > 0.
    pub fn empirical_logit(&self) -> f64 {
        ((self.y as f64 + 0.5) / ((self.n - self.y) as f64 + 0.5)).ln()
    }

    pub fn failures(&self) -> u64 {
        self.n - self.y
    }
}

impl std::ops::Add for BinomialSummary {
    type Output = BinomialSummary;
    fn add(self, rhs: Self) -> Self {
        BinomialSummary {
            y: self.y + rhs.y,
            n: self.n + rhs.n,
        }
    }
}

impl std::iter::Sum for BinomialSummary {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(BinomialSummary::default(), |a, b| a + b)
    }
}

/// Grouping key for [`summary_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub source: SourceLabel,
    pub arm: Arm,
    pub stratum: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    SourceArm,
    SourceArmStratum,
}

/// Counts responders among subjects matching `filter`. An empty match has `n = 0`.
pub fn summarize<'a, I, F>(subjects: I, filter: F) -> BinomialSummary
where
    I: IntoIterator<Item = &'a Subject>,
    F: Fn(&Subject) -> bool,
{
    subjects
        .into_iter()
        .filter(|s| filter(s))
        .map(|s| BinomialSummary {
            y: s.outcome as u64,
            n: 1,
        })
        .sum()
}

/// Per-group summaries, sorted by key.
pub fn summary_table(
    subjects: &[Subject],
    by: GroupBy,
) -> Result<Vec<(GroupKey, BinomialSummary)>> {
    let mut table: std::collections::BTreeMap<GroupKey, BinomialSummary> = Default::default();
    for (i, s) in subjects.iter().enumerate() {
        let stratum = match by {
            GroupBy::SourceArm => None,
            GroupBy::SourceArmStratum => match s.stratum {
                Some(k) => Some(k),
                None if s.propensity.is_some() => continue, // trimmed
                None => {
                    return Err(Error::validation(format!(
                        "subject {i} has no stratum assigned"
                    )));
                }
            },
        };
        let key = GroupKey {
            source: s.source,
            arm: s.arm,
            stratum,
        };
        let cell = table.entry(key).or_default();
        *cell = *cell
            + BinomialSummary {
                y: s.outcome as u64,
                n: 1,
            };
    }
    Ok(table.into_iter().collect())
}

/// Outcome counts of one stratum, indexed `[source.index()][arm.index()]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StratumCell {
    pub outcomes: [[BinomialSummary; 2]; 3],
}

impl StratumCell {
    pub fn summary(&self, source: SourceLabel, arm: Arm) -> BinomialSummary {
        self.outcomes[source.index()][arm.index()]
    }

    pub fn n(&self, source: SourceLabel) -> u64 {
        self.outcomes[source.index()].iter().map(|b| b.n).sum()
    }
}

/// Subjects partitioned into propensity strata after trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedData {
    /// `S + 1` strictly increasing cut points; stratum `s` is `[b_s, b_{s+1})`, the last one closed.
    pub boundaries: Vec<f64>,
    pub strata: Vec<StratumCell>,
    /// Stratum of every input subject, `None` when trimmed.
    pub assignment: Vec<Option<usize>>,
    /// Trimmed subject counts by source index.
    pub trimmed: [u64; 3],
}

impl StratifiedData {
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn summary(&self, stratum: usize, source: SourceLabel, arm: Arm) -> BinomialSummary {
        self.strata[stratum].summary(source, arm)
    }

    pub fn n_current(&self) -> u64 {
        self.strata.iter().map(|c| c.n(SourceLabel::Current)).sum()
    }

    /// n_Curr,s / N_Curr.
    pub fn current_shares(&self) -> Vec<f64> {
        let total = self.n_current() as f64;
        self.strata
            .iter()
            .map(|c| c.n(SourceLabel::Current) as f64 / total)
            .collect()
    }

    /// Stratum holds no external and no real-world subject.
    pub fn no_borrow(&self, stratum: usize) -> bool {
        let c = &self.strata[stratum];
        c.n(SourceLabel::External) == 0 && c.n(SourceLabel::RealWorld) == 0
    }

    /// Sum over strata.
    pub fn pooled(&self, source: SourceLabel, arm: Arm) -> BinomialSummary {
        self.strata.iter().map(|c| c.summary(source, arm)).sum()
    }
}

/// Column names used when reading a subject table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub source: String,
    pub arm: String,
    pub outcome: String,
    /// Covariate columns in order. Empty means every remaining column.
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            source: "source".into(),
            arm: "arm".into(),
            outcome: "outcome".into(),
            covariates: vec![],
        }
    }
}

pub fn load_subjects(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<Vec<Subject>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_subjects(file, schema)
}

/// Parses a subject CSV. Row numbers in errors are file line numbers (header = 1).
pub fn read_subjects<R: Read>(reader: R, schema: &ColumnMap) -> Result<Vec<Subject>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("missing column '{name}'"),
            })
    };
    let i_source = find(&schema.source)?;
    let i_arm = find(&schema.arm)?;
    let i_outcome = find(&schema.outcome)?;
    let cov_idx: Vec<usize> = if schema.covariates.is_empty() {
        (0..headers.len())
            .filter(|i| ![i_source, i_arm, i_outcome].contains(i))
            .collect()
    } else {
        schema
            .covariates
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?
    };

    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let perr = |message: String| Error::Parse { row, message };
        let source: SourceLabel = rec[i_source].parse().map_err(perr)?;
        let arm: Arm = rec[i_arm].parse().map_err(perr)?;
        let outcome = match &rec[i_outcome] {
            "0" => false,
            "1" => true,
            other => return Err(perr(format!("outcome must be 0 or 1, got '{other}'"))),
        };
        let covariates = cov_idx
            .iter()
            .map(|&i| {
                let field = &rec[i];
                if field.is_empty() {
                    return Err(perr(format!("missing covariate '{}'", &headers[i])));
                }
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        perr(format!(
                            "covariate '{}' is not a number: '{field}'",
                            &headers[i]
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let subject =
            Subject::new(source, arm, covariates, outcome).map_err(|e| perr(e.to_string()))?;
        out.push(subject);
    }
    Ok(out)
}

/// Writes subjects with covariate columns `x1..xk`.
pub fn write_subjects<W: Write>(writer: W, subjects: &[Subject]) -> Result<()> {
    let k = subjects.first().map_or(0, |s| s.covariates.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["source".to_string(), "arm".into(), "outcome".into()];
    header.extend((1..=k).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for s in subjects {
        let mut row = vec![
            s.source.token().to_string(),
            s.arm.token().into(),
            (s.outcome as u8).to_string(),
        ];
        row.extend(s.covariates.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether covariates in `subjects` all have the same length.
pub fn covariate_dimension(subjects: &[Subject]) -> Result<usize> {
    let k = subjects.first().map_or(0, |s| s.covariates.len());
    if let Some(i) = subjects.iter().position(|s| s.covariates.len() != k) {
        return Err(Error::validation(format!(
            "subject {i} has {} covariates, expected {k}",
            subjects[i].covariates.len()
        )));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Marginal moments of one covariate in one group. For binary covariates
/// `mean` is the proportion and `sd` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateMoments {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateGroup {
    pub source: SourceLabel,
    pub arm: Arm,
    pub n: u64,
    pub y: u64,
    pub covariates: Vec<CovariateMoments>,
}

/// Published baseline table for every source × arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub covariates: Vec<CovariateSpec>,
    pub groups: Vec<AggregateGroup>,
    /// When true, exactly `y` of the `n` simulated subjects respond;
    /// otherwise outcomes are Bernoulli(y/n).
    #[serde(default)]
    pub exact_counts: bool,
}

impl AggregateSummary {
    pub fn from_json(text: &str) -> Result<Self> {
        let agg: AggregateSummary = serde_json::from_str(text)?;
        agg.validate()?;
        Ok(agg)
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.groups {
            if g.n == 0 {
                return Err(Error::validation(format!(
                    "{} {} group has n = 0",
                    g.source, g.arm
                )));
            }
            if g.y > g.n {
                return Err(Error::validation(format!(
                    "{} {} group has y > n",
                    g.source, g.arm
                )));
            }
            if g.source == SourceLabel::RealWorld && g.arm == Arm::Control {
                return Err(Error::validation(
                    "real-world cohort cannot have a control group",
                ));
            }
            if g.covariates.len() != self.covariates.len() {
                return Err(Error::validation(format!(
                    "{} {} group lists {} covariates, expected {}",
                    g.source,
                    g.arm,
                    g.covariates.len(),
                    self.covariates.len()
                )));
            }
            for (spec, m) in self.covariates.iter().zip(&g.covariates) {
                match spec.kind {
                    CovariateKind::Binary if !(0.0..=1.0).contains(&m.mean) => {
                        return Err(Error::validation(format!(
                            "proportion for '{}' outside [0, 1]",
                            spec.name
                        )));
                    }
                    CovariateKind::Continuous if !m.sd.is_some_and(|sd| sd > 0.0) => {
                        return Err(Error::validation(format!(
                            "'{}' needs a positive sd",
                            spec.name
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn group(&self, source: SourceLabel, arm: Arm) -> Option<&AggregateGroup> {
        self.groups
            .iter()
            .find(|g| g.source == source && g.arm == arm)
    }

    pub fn group_mut(&mut self, source: SourceLabel, arm: Arm) -> Option<&mut AggregateGroup> {
        self.groups
            .iter_mut()
            .find(|g| g.source == source && g.arm == arm)
    }
}

/// Draws subject-level data matching the aggregate table, covariates independent.
pub fn simulate_from_aggregate(
    agg: &AggregateSummary,
    rng: &mut RngStream,
) -> Result<Vec<Subject>> {
    agg.validate()?;
    let mut out = Vec::with_capacity(agg.groups.iter().map(|g| g.n as usize).sum());
    for g in &agg.groups {
        let n = g.n as usize;
        let mut outcomes: Vec<bool> = if agg.exact_counts {
            let mut v: Vec<bool> = (0..n).map(|i| (i as u64) < g.y).collect();
            v.shuffle(rng);
            v
        } else {
            let p = g.y as f64 / g.n as f64;
            (0..n).map(|_| rng.random::<f64>() < p).collect()
        };
        for outcome in outcomes.drain(..) {
            let covariates = agg
                .covariates
                .iter()
                .zip(&g.covariates)
                .map(|(spec, m)| match spec.kind {
                    CovariateKind::Binary => {
                        if rng.random::<f64>() < m.mean {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    CovariateKind::Continuous => {
                        let sd = m.sd.unwrap_or(f64::NAN);
                        Normal::new(m.mean, sd).expect("validated sd").sample(rng)
                    }
                })
                .collect();
            out.push(Subject::new(g.source, g.arm, covariates, outcome)?);
        }
    }
    Ok(out)
}
