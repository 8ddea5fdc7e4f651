//! One-shot subject identification and the cross-condition fold protocol.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{aligned_distance, modal_features, FeatureSource, ModalFeatures};
use crate::model::{ModelParams, ModelStructure, Recording, RegionPartition};
use crate::sysid::{default_lambda, fit_with, FitOptions};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingKey {
    pub subject_id: String,
    pub task_id: String,
    pub scan_id: String,
}

impl RecordingKey {
    pub fn new(subject_id: impl Into<String>, task_id: impl Into<String>, scan_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            task_id: task_id.into(),
            scan_id: scan_id.into(),
        }
    }

    pub fn of(rec: &Recording) -> Self {
        Self::new(rec.subject_id(), rec.task_id(), rec.scan_id())
    }
}

impl std::fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.subject_id, self.task_id, self.scan_id)
    }
}

#[derive(Clone, Debug)]
pub struct DbEntry {
    pub params: ModelParams,
    pub features: ModalFeatures,
}

/// Labeled reference signatures. All entries share `m`, `n` and the
/// feature source.
#[derive(Clone, Debug, Default)]
pub struct ReferenceDB {
    entries: BTreeMap<RecordingKey, DbEntry>,
}

impl ReferenceDB {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: RecordingKey, params: ModelParams, features: ModalFeatures) -> Result<()> {
        if let Some(first) = self.entries.values().next() {
            let same = first.params.states() == params.states()
                && first.params.inputs() == params.inputs()
                && first.features.source() == features.source();
            if !same {
                return Err(Error::Shape(format!(
                    "entry {key} differs in dimensions or feature source from the database"
                )));
            }
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Duplicate(key.to_string()));
        }
        self.entries.insert(key, DbEntry { params, features });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &RecordingKey) -> Option<&DbEntry> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RecordingKey, &DbEntry)> {
        self.entries.iter()
    }

    pub fn task_entries<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = (&'a RecordingKey, &'a DbEntry)> {
        self.entries.iter().filter(move |(k, _)| k.task_id == task_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub subject_id: String,
    pub distance: f64,
}

/// Nearest reference subject for `task_id` under the aligned distance.
/// Equal distances resolve to the lexicographically smallest subject.
pub fn identify(query: &ModalFeatures, db: &ReferenceDB, task_id: &str) -> Result<Identification> {
    let mut best: Option<Identification> = None;
    for (key, entry) in db.task_entries(task_id) {
        let d = aligned_distance(query, &entry.features)?;
        let better = match &best {
            None => true,
            Some(b) => d < b.distance || (d == b.distance && key.subject_id < b.subject_id),
        };
        if better {
            best = Some(Identification {
                subject_id: key.subject_id.clone(),
                distance: d,
            });
        }
    }
    best.ok_or_else(|| Error::EmptyDatabase(task_id.to_string()))
}

/// Settings shared by fitting passes over many recordings.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// `None` uses [`default_lambda`] per recording.
    pub lambda: Option<f64>,
    pub zscore: bool,
    /// Also fit the single-timescale model.
    pub with_single: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            zscore: false,
            with_single: true,
        }
    }
}

/// Signatures of one recording.
#[derive(Clone, Debug)]
pub struct FittedRecording {
    pub key: RecordingKey,
    pub params: ModelParams,
    pub single: Option<ModelParams>,
}

impl FittedRecording {
    pub fn features(&self, source: FeatureSource) -> Result<ModalFeatures> {
        match source {
            FeatureSource::SingleTimescale => {
                let single = self.single.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("no single-timescale fit for {}", self.key))
                })?;
                modal_features(single, source)
            }
            _ => modal_features(&self.params, source),
        }
    }
}

/// Fits every recording; results keep the input order.
pub fn fit_recordings(
    recordings: &[Recording],
    part: &RegionPartition,
    cfg: &FitConfig,
) -> Result<Vec<FittedRecording>> {
    recordings
        .par_iter()
        .map(|rec| {
            let rec = if cfg.zscore { rec.zscored() } else { rec.clone() };
            let (x, u) = part.split(&rec)?;
            let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(rec.samples()));
            let opts = FitOptions::ridge(lambda).with_dt(rec.dt());
            let params = fit_with(&x, &u, &opts)?.params;
            let single = if cfg.with_single {
                let opts = opts.with_structure(ModelStructure::SingleTimescale);
                Some(fit_with(&x, &u, &opts)?.params)
            } else {
                None
            };
            Ok(FittedRecording {
                key: RecordingKey::of(&rec),
                params,
                single,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryTally {
    pub condition: String,
    pub n_queries: usize,
    pub n_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub reference_condition: String,
    pub per_query_condition: Vec<QueryTally>,
    pub n_queries: usize,
    pub n_correct: usize,
    /// Fraction of all query recordings identified correctly.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AccuracyTable {
    pub folds: Vec<FoldResult>,
}

impl AccuracyTable {
    pub fn mean_accuracy(&self) -> f64 {
        if self.folds.is_empty() {
            return 0.0;
        }
        self.folds.iter().map(|f| f.accuracy).sum::<f64>() / self.folds.len() as f64
    }

    /// CSV with one row per fold; query conditions joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,reference_condition,query_condition,n_queries,n_correct,accuracy\n");
        for f in &self.folds {
            let queries: Vec<&str> = f.per_query_condition.iter().map(|q| q.condition.as_str()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                f.fold,
                f.reference_condition,
                queries.join(";"),
                f.n_queries,
                f.n_correct,
                f.accuracy
            ));
        }
        out
    }
}

/// Runs one fold per reference condition: the database holds every
/// recording scanned under that condition, and every other recording of the
/// same subject and task is a query. `reference_conditions = None` uses all
/// scan conditions in sorted order.
pub fn evaluate_fitted(
    fitted: &[FittedRecording],
    source: FeatureSource,
    reference_conditions: Option<&[String]>,
) -> Result<AccuracyTable> {
    let mut scans: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for f in fitted {
        if !seen.insert(&f.key) {
            return Err(Error::Duplicate(f.key.to_string()));
        }
        *scans.entry((f.key.subject_id.as_str(), f.key.task_id.as_str())).or_default() += 1;
    }
    for ((subject, task), count) in &scans {
        if *count < 2 {
            log::warn!("subject {subject} has a single scan for task {task}; skipped");
        }
    }
    let usable: Vec<&FittedRecording> = fitted
        .iter()
        .filter(|f| scans[&(f.key.subject_id.as_str(), f.key.task_id.as_str())] >= 2)
        .collect();

    let features: Vec<ModalFeatures> = usable
        .par_iter()
        .map(|f| f.features(source))
        .collect::<Result<_>>()?;

    let conditions: Vec<String> = match reference_conditions {
        Some(c) => c.to_vec(),
        None => usable
            .iter()
            .map(|f| f.key.scan_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    let mut folds = Vec::with_capacity(conditions.len());
    for (fold, reference) in conditions.iter().enumerate() {
        let mut db = ReferenceDB::new();
        for (f, feat) in usable.iter().zip(&features) {
            if &f.key.scan_id == reference {
                db.insert(f.key.clone(), f.params.clone(), feat.clone())?;
            }
        }
        let has_reference: BTreeSet<(&str, &str)> = db
            .iter()
            .map(|(k, _)| (k.subject_id.as_str(), k.task_id.as_str()))
            .collect();
        let queries: Vec<(&FittedRecording, &ModalFeatures)> = usable
            .iter()
            .zip(&features)
            .filter(|(f, _)| &f.key.scan_id != reference)
            .filter(|(f, _)| has_reference.contains(&(f.key.subject_id.as_str(), f.key.task_id.as_str())))
            .map(|(f, feat)| (*f, feat))
            .collect();
        let outcomes: Vec<(String, bool)> = queries
            .par_iter()
            .map(|(f, feat)| {
                let id = identify(feat, &db, &f.key.task_id)?;
                Ok((f.key.scan_id.clone(), id.subject_id == f.key.subject_id))
            })
            .collect::<Result<_>>()?;

        let mut tallies: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (condition, correct) in outcomes {
            let t = tallies.entry(condition).or_default();
            t.0 += 1;
            t.1 += usize::from(correct);
        }
        let n_queries: usize = tallies.values().map(|t| t.0).sum();
        let n_correct: usize = tallies.values().map(|t| t.1).sum();
        folds.push(FoldResult {
            fold,
            reference_condition: reference.clone(),
            per_query_condition: tallies
                .into_iter()
                .map(|(condition, (n_queries, n_correct))| QueryTally {
                    condition,
                    n_queries,
                    n_correct,
                })
                .collect(),
            n_queries,
            n_correct,
            accuracy: if n_queries > 0 {
                n_correct as f64 / n_queries as f64
            } else {
                0.0
            },
        });
    }
    Ok(AccuracyTable { folds })
}

/// Fits all recordings and runs the fold protocol for one feature source.
pub fn evaluate_folds(
    recordings: &[Recording],
    part: &RegionPartition,
    lambda: Option<f64>,
    source: FeatureSource,
) -> Result<AccuracyTable> {
    let cfg = FitConfig {
        lambda,
        zscore: false,
        with_single: source == FeatureSource::SingleTimescale,
    };
    let fitted = fit_recordings(recordings, part, &cfg)?;
    evaluate_fitted(&fitted, source, None)
}
