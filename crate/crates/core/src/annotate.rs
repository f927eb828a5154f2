//! Annotation service state: assignment of matched pairs to annotators, the
//! three-step rating flow, the append-only record log and the export.
//!
//! The HTTP layer lives in the CLI; everything here is synchronous and
//! expects callers to serialize access.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{key_of, site, stream};
use crate::stats::{median_aggregate, reml_random_intercept, Design, MixedModelFit, RatingsMatrix};

/// Every pair is rated by this many distinct annotators.
pub const RATERS_PER_PAIR: usize = 3;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("`{0}` may not submit resolution ratings")]
    NotReviewer(String),
    #[error("out of order: expected {expected}, got pair `{pair_id}` step {step}")]
    OutOfOrder {
        expected: String,
        pair_id: String,
        step: u8,
    },
    #[error("rating {0} outside 1..=5")]
    InvalidValue(u8),
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("document `{doc}` is not part of pair `{pair}`")]
    UnknownDocument { pair: String, doc: String },
    #[error("need at least {needed} annotators, got {got}")]
    TooFewAnnotators { needed: usize, got: usize },
    #[error("duplicate {what} `{id}`")]
    Duplicate { what: &'static str, id: String },
    #[error("annotation log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, AnnotationError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDoc {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

/// A matched pair prepared for annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationPair {
    pub pair_id: String,
    pub treated: PairDoc,
    pub control: PairDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingKind {
    Agency,
    Similarity,
}

/// Step 1 rates the first shown document, step 2 the pair, step 3 the
/// second document.
pub fn kind_of_step(step: u8) -> RatingKind {
    if step == 2 {
        RatingKind::Similarity
    } else {
        RatingKind::Agency
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub seq: u64,
    pub annotator: String,
    pub pair_id: String,
    pub step: u8,
    pub kind: RatingKind,
    /// The rated document for agency records.
    pub doc_id: Option<String>,
    pub value: u8,
    pub practice: bool,
    /// Written through the reviewer endpoint during conflict resolution.
    pub resolution: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Shown to annotators. Carries no distance, verdict or group label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShownDoc {
    pub position: u8,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextUnit {
    Task {
        pair_id: String,
        step: u8,
        question: RatingKind,
        practice: bool,
        documents: Vec<ShownDoc>,
        completed: usize,
        total: usize,
    },
    Done {
        completed: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub annotator: String,
    pub pair_id: String,
    pub step: u8,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub reviewer: String,
    pub pair_id: String,
    pub kind: RatingKind,
    #[serde(default)]
    pub doc_id: Option<String>,
    pub value: u8,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator: String,
    pub completed: usize,
    pub assigned: usize,
    pub step: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub pairs: usize,
    pub pairs_complete: usize,
    pub records: usize,
    pub annotators: Vec<AnnotatorProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    pair: usize,
    practice: bool,
    treated_first: bool,
}

#[derive(Debug, Clone)]
struct Session {
    queue: Vec<Slot>,
    pos: usize,
    step: u8,
}

impl Session {
    fn current(&self) -> Option<Slot> {
        self.queue.get(self.pos).copied()
    }

    fn completed(&self) -> usize {
        self.queue[..self.pos].iter().filter(|s| !s.practice).count()
    }

    fn assigned(&self) -> usize {
        self.queue.iter().filter(|s| !s.practice).count()
    }
}

pub struct AnnotationService {
    pairs: Vec<AnnotationPair>,
    practice: Vec<AnnotationPair>,
    annotators: Vec<String>,
    reviewers: BTreeSet<String>,
    sessions: HashMap<String, Session>,
    records: Vec<AnnotationRecord>,
    log: Option<(PathBuf, File)>,
}

impl AnnotationService {
    /// Pairs are dealt round-robin in a seeded order so that each reaches
    /// three consecutive (hence distinct) annotators and loads differ by at
    /// most one. Practice pairs are shown to everyone first.
    pub fn new(
        pairs: Vec<AnnotationPair>,
        practice: Vec<AnnotationPair>,
        annotators: Vec<String>,
        reviewers: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if annotators.len() < RATERS_PER_PAIR {
            return Err(AnnotationError::TooFewAnnotators {
                needed: RATERS_PER_PAIR,
                got: annotators.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for a in &annotators {
            if !seen.insert(a.as_str()) {
                return Err(AnnotationError::Duplicate {
                    what: "annotator",
                    id: a.clone(),
                });
            }
        }
        let mut ids = BTreeSet::new();
        for p in pairs.iter().chain(&practice) {
            if !ids.insert(p.pair_id.as_str()) {
                return Err(AnnotationError::Duplicate {
                    what: "pair",
                    id: p.pair_id.clone(),
                });
            }
        }

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut stream(seed, &[site::ANNOTATE, 0]));
        let n = annotators.len();
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &p) in order.iter().enumerate() {
            for r in 0..RATERS_PER_PAIR {
                assigned[(k * RATERS_PER_PAIR + r) % n].push(p);
            }
        }
        let mut sessions = HashMap::new();
        for (a, mine) in annotators.iter().zip(assigned) {
            let mut rng = stream(seed, &[site::ANNOTATE, key_of(a)]);
            let mut queue: Vec<Slot> = (0..practice.len())
                .map(|p| Slot {
                    pair: p,
                    practice: true,
                    treated_first: rng.random(),
                })
                .collect();
            let mut real: Vec<Slot> = mine
                .into_iter()
                .map(|p| Slot {
                    pair: p,
                    practice: false,
                    treated_first: rng.random(),
                })
                .collect();
            real.shuffle(&mut rng);
            queue.extend(real);
            sessions.insert(a.clone(), Session { queue, pos: 0, step: 1 });
        }
        Ok(AnnotationService {
            pairs,
            practice,
            annotators,
            reviewers: reviewers.into_iter().collect(),
            sessions,
            records: Vec::new(),
            log: None,
        })
    }

    /// Replays any records already in `path`, then appends new ones to it.
    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let log_err = |e: std::io::Error| AnnotationError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if path.exists() {
            let f = File::open(path).map_err(log_err)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(log_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| AnnotationError::Log {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                if rec.resolution {
                    self.records.push(rec);
                } else {
                    let sub = Submission {
                        annotator: rec.annotator,
                        pair_id: rec.pair_id,
                        step: rec.step,
                        value: rec.value,
                    };
                    self.apply(&sub)?;
                }
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(log_err)?;
        self.log = Some((path.to_path_buf(), f));
        Ok(self)
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    fn session(&self, annotator: &str) -> Result<&Session> {
        self.sessions
            .get(annotator)
            .ok_or_else(|| AnnotationError::UnknownAnnotator(annotator.to_string()))
    }

    fn pair(&self, slot: Slot) -> &AnnotationPair {
        if slot.practice {
            &self.practice[slot.pair]
        } else {
            &self.pairs[slot.pair]
        }
    }

    fn ordered(&self, slot: Slot) -> (&PairDoc, &PairDoc) {
        let p = self.pair(slot);
        if slot.treated_first {
            (&p.treated, &p.control)
        } else {
            (&p.control, &p.treated)
        }
    }

    pub fn next(&self, annotator: &str) -> Result<NextUnit> {
        let s = self.session(annotator)?;
        let Some(slot) = s.current() else {
            return Ok(NextUnit::Done {
                completed: s.completed(),
            });
        };
        let (first, second) = self.ordered(slot);
        let shown = |position: u8, d: &PairDoc| ShownDoc {
            position,
            title: d.title.clone(),
            body: d.body.clone(),
        };
        let documents = match s.step {
            1 => vec![shown(1, first)],
            2 => vec![shown(1, first), shown(2, second)],
            _ => vec![shown(2, second)],
        };
        Ok(NextUnit::Task {
            pair_id: self.pair(slot).pair_id.clone(),
            step: s.step,
            question: kind_of_step(s.step),
            practice: slot.practice,
            documents,
            completed: s.completed(),
            total: s.assigned(),
        })
    }

    pub fn submit(&mut self, sub: &Submission) -> Result<AnnotationRecord> {
        let rec = self.apply(sub)?;
        self.append_log(&rec)?;
        Ok(rec)
    }

    fn apply(&mut self, sub: &Submission) -> Result<AnnotationRecord> {
        if !(RatingsMatrix::MIN..=RatingsMatrix::MAX).contains(&sub.value) {
            return Err(AnnotationError::InvalidValue(sub.value));
        }
        let s = self.session(&sub.annotator)?;
        let expected = match s.current() {
            Some(slot) => (slot, self.pair(slot).pair_id.clone(), s.step),
            None => {
                return Err(AnnotationError::OutOfOrder {
                    expected: "no further ratings".into(),
                    pair_id: sub.pair_id.clone(),
                    step: sub.step,
                })
            }
        };
        let (slot, pair_id, step) = expected;
        if pair_id != sub.pair_id || step != sub.step {
            return Err(AnnotationError::OutOfOrder {
                expected: format!("pair `{pair_id}` step {step}"),
                pair_id: sub.pair_id.clone(),
                step: sub.step,
            });
        }
        let (first, second) = self.ordered(slot);
        let doc_id = match step {
            1 => Some(first.doc_id.clone()),
            3 => Some(second.doc_id.clone()),
            _ => None,
        };
        let rec = AnnotationRecord {
            seq: self.records.len() as u64,
            annotator: sub.annotator.clone(),
            pair_id,
            step,
            kind: kind_of_step(step),
            doc_id,
            value: sub.value,
            practice: slot.practice,
            resolution: false,
            note: None,
        };
        let s = self.sessions.get_mut(&sub.annotator).expect("session checked above");
        if s.step == 3 {
            s.step = 1;
            s.pos += 1;
        } else {
            s.step += 1;
        }
        self.records.push(rec.clone());
        Ok(rec)
    }

    /// Reviewer rating recorded during conflict resolution. It does not
    /// replace the original ratings.
    pub fn resolve(&mut self, r: &Resolution) -> Result<AnnotationRecord> {
        if !self.reviewers.contains(&r.reviewer) {
            return Err(AnnotationError::NotReviewer(r.reviewer.clone()));
        }
        if !(RatingsMatrix::MIN..=RatingsMatrix::MAX).contains(&r.value) {
            return Err(AnnotationError::InvalidValue(r.value));
        }
        let pair = self
            .pairs
            .iter()
            .find(|p| p.pair_id == r.pair_id)
            .ok_or_else(|| AnnotationError::UnknownPair(r.pair_id.clone()))?;
        let doc_id = match r.kind {
            RatingKind::Similarity => None,
            RatingKind::Agency => {
                let d = r.doc_id.clone().unwrap_or_default();
                if d != pair.treated.doc_id && d != pair.control.doc_id {
                    return Err(AnnotationError::UnknownDocument {
                        pair: r.pair_id.clone(),
                        doc: d,
                    });
                }
                Some(d)
            }
        };
        let rec = AnnotationRecord {
            seq: self.records.len() as u64,
            annotator: r.reviewer.clone(),
            pair_id: r.pair_id.clone(),
            step: if r.kind == RatingKind::Similarity { 2 } else { 0 },
            kind: r.kind,
            doc_id,
            value: r.value,
            practice: false,
            resolution: true,
            note: r.note.clone(),
        };
        self.append_log(&rec)?;
        self.records.push(rec.clone());
        Ok(rec)
    }

    fn append_log(&mut self, rec: &AnnotationRecord) -> Result<()> {
        if let Some((path, f)) = &mut self.log {
            let mut line = serde_json::to_vec(rec).expect("records serialize");
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.flush())
                .map_err(|e| AnnotationError::Log {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn progress(&self) -> Progress {
        let annotators: Vec<AnnotatorProgress> = self
            .annotators
            .iter()
            .map(|a| {
                let s = &self.sessions[a];
                AnnotatorProgress {
                    annotator: a.clone(),
                    completed: s.completed(),
                    assigned: s.assigned(),
                    step: s.current().map(|_| s.step),
                }
            })
            .collect();
        let mut done: HashMap<&str, usize> = HashMap::new();
        for r in self
            .records
            .iter()
            .filter(|r| !r.practice && !r.resolution && r.step == 3)
        {
            *done.entry(r.pair_id.as_str()).or_default() += 1;
        }
        Progress {
            pairs: self.pairs.len(),
            pairs_complete: done.values().filter(|&&c| c >= RATERS_PER_PAIR).count(),
            records: self.records.iter().filter(|r| !r.practice).count(),
            annotators,
        }
    }

    pub fn export(&self) -> AnnotationExport {
        let treated: HashMap<&str, &str> = self
            .pairs
            .iter()
            .map(|p| (p.pair_id.as_str(), p.treated.doc_id.as_str()))
            .collect();
        let mut similarity = Vec::new();
        let mut agency = Vec::new();
        let mut resolutions = Vec::new();
        for r in &self.records {
            if r.practice {
                continue;
            }
            if r.resolution {
                resolutions.push(r.clone());
                continue;
            }
            match r.kind {
                RatingKind::Similarity => similarity.push(SimilarityRecord {
                    pair_id: r.pair_id.clone(),
                    annotator: r.annotator.clone(),
                    value: r.value,
                }),
                RatingKind::Agency => {
                    let doc_id = r.doc_id.clone().unwrap_or_default();
                    agency.push(AgencyRecord {
                        treated: treated.get(r.pair_id.as_str()) == Some(&doc_id.as_str()),
                        pair_id: r.pair_id.clone(),
                        doc_id,
                        annotator: r.annotator.clone(),
                        value: r.value,
                    })
                }
            }
        }
        similarity.sort_by(|a, b| (&a.pair_id, &a.annotator).cmp(&(&b.pair_id, &b.annotator)));
        agency.sort_by(|a, b| (&a.pair_id, &a.doc_id, &a.annotator).cmp(&(&b.pair_id, &b.doc_id, &b.annotator)));
        let mut annotators = self.annotators.clone();
        annotators.sort();
        AnnotationExport {
            annotators,
            similarity,
            agency,
            resolutions,
        }
    }

    /// Writes the export through a temporary file and a rename.
    pub fn export_to(&self, path: &Path) -> Result<AnnotationExport> {
        let export = self.export();
        let err = |e: std::io::Error| AnnotationError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec_pretty(&export).expect("export serializes");
        fs::write(&tmp, bytes).map_err(err)?;
        fs::rename(&tmp, path).map_err(err)?;
        Ok(export)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub pair_id: String,
    pub annotator: String,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgencyRecord {
    pub pair_id: String,
    pub doc_id: String,
    pub annotator: String,
    pub value: u8,
    /// Whether the document is the treated member of its pair.
    pub treated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationExport {
    pub annotators: Vec<String>,
    pub similarity: Vec<SimilarityRecord>,
    pub agency: Vec<AgencyRecord>,
    pub resolutions: Vec<AnnotationRecord>,
}

impl AnnotationExport {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Pairs by annotators grid of similarity ratings, pairs in id order.
    pub fn similarity_matrix(&self) -> RatingsMatrix {
        let col: HashMap<&str, usize> = self
            .annotators
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect();
        let mut units: BTreeMap<&str, Vec<Option<u8>>> = BTreeMap::new();
        for r in &self.similarity {
            let row = units
                .entry(&r.pair_id)
                .or_insert_with(|| vec![None; self.annotators.len()]);
            if let Some(&c) = col.get(r.annotator.as_str()) {
                row[c] = Some(r.value);
            }
        }
        let mut m = RatingsMatrix::new(self.annotators.len());
        for row in units.into_values() {
            m.push_unit(row).expect("exported ratings are in range");
        }
        m
    }

    /// Median similarity per pair, for pairs with exactly three ratings.
    pub fn median_similarity(&self) -> BTreeMap<String, u8> {
        let mut by: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for r in &self.similarity {
            by.entry(&r.pair_id).or_default().push(r.value);
        }
        by.into_iter()
            .filter_map(|(p, v)| median_aggregate(&v).ok().map(|m| (p.to_string(), m)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityClass {
    Similar,
    Dissimilar,
    /// Median of exactly 3: neither group.
    Excluded,
}

impl SimilarityClass {
    pub fn of(median: u8) -> Self {
        match median {
            4.. => SimilarityClass::Similar,
            3 => SimilarityClass::Excluded,
            _ => SimilarityClass::Dissimilar,
        }
    }
}

/// Agency ~ Gender * isDissimilar + (1 | Annotator), on agency ratings of
/// pairs classed similar or dissimilar. Gender is 1 for the treated member.
pub fn agency_model(export: &AnnotationExport) -> crate::Result<MixedModelFit> {
    let classes: BTreeMap<String, SimilarityClass> = export
        .median_similarity()
        .into_iter()
        .map(|(p, m)| (p, SimilarityClass::of(m)))
        .collect();
    let ann: HashMap<&str, usize> = export
        .annotators
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let (mut y, mut g, mut d, mut groups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &export.agency {
        let dissimilar = match classes.get(&r.pair_id) {
            Some(SimilarityClass::Similar) => 0.0,
            Some(SimilarityClass::Dissimilar) => 1.0,
            _ => continue,
        };
        let Some(&a) = ann.get(r.annotator.as_str()) else {
            continue;
        };
        y.push(f64::from(r.value));
        g.push(if r.treated { 1.0 } else { 0.0 });
        d.push(dissimilar);
        groups.push(a);
    }
    let x = Design::interaction("Gender", &g, "isDissimilar", &d)?;
    reml_random_intercept(&y, &x, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize) -> AnnotationPair {
        let doc = |k: &str| PairDoc {
            doc_id: format!("{k}{i}"),
            title: format!("title {k}{i}"),
            body: format!("body {k}{i}"),
        };
        AnnotationPair {
            pair_id: format!("p{i:03}"),
            treated: doc("t"),
            control: doc("c"),
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("ann{i}")).collect()
    }

    fn service(pairs: usize, annotators: usize) -> AnnotationService {
        AnnotationService::new(
            (0..pairs).map(pair).collect(),
            vec![],
            names(annotators),
            vec!["lead".into()],
            1,
        )
        .unwrap()
    }

    fn run_all(svc: &mut AnnotationService, value: impl Fn(&str, &str, u8) -> u8) {
        for a in svc.annotators().to_vec() {
            while let NextUnit::Task { pair_id, step, .. } = svc.next(&a).unwrap() {
                let v = value(&a, &pair_id, step);
                svc.submit(&Submission {
                    annotator: a.clone(),
                    pair_id,
                    step,
                    value: v,
                })
                .unwrap();
            }
        }
    }

    #[test]
    fn assignment_is_balanced_and_distinct() {
        for (p, n) in [(100, 5), (7, 3), (10, 4), (1, 6)] {
            let svc = service(p, n);
            let loads: Vec<usize> = svc.annotators.iter().map(|a| svc.sessions[a].assigned()).collect();
            assert!(
                loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1,
                "{loads:?}"
            );
            let mut per_pair: HashMap<usize, BTreeSet<&String>> = HashMap::new();
            for a in &svc.annotators {
                for s in &svc.sessions[a].queue {
                    assert!(per_pair.entry(s.pair).or_default().insert(a));
                }
            }
            assert!(per_pair.values().all(|s| s.len() == RATERS_PER_PAIR));
            assert_eq!(per_pair.len(), p);
        }
        assert!(AnnotationService::new(vec![pair(0)], vec![], names(2), vec![], 1).is_err());
    }

    #[test]
    fn three_step_flow() {
        let mut svc = service(3, 3);
        let NextUnit::Task {
            pair_id,
            step,
            documents,
            ..
        } = svc.next("ann0").unwrap()
        else {
            panic!()
        };
        assert_eq!((step, documents.len()), (1, 1));
        let sub = |step, value| Submission {
            annotator: "ann0".into(),
            pair_id: pair_id.clone(),
            step,
            value,
        };
        assert!(matches!(
            svc.submit(&sub(2, 3)),
            Err(AnnotationError::OutOfOrder { .. })
        ));
        assert!(matches!(svc.submit(&sub(1, 0)), Err(AnnotationError::InvalidValue(0))));
        let first = svc.submit(&sub(1, 4)).unwrap();
        let NextUnit::Task { step, documents, .. } = svc.next("ann0").unwrap() else {
            panic!()
        };
        assert_eq!((step, documents.len()), (2, 2));
        assert!(svc.submit(&sub(1, 4)).is_err(), "ratings are immutable");
        svc.submit(&sub(2, 5)).unwrap();
        let NextUnit::Task { documents, .. } = svc.next("ann0").unwrap() else {
            panic!()
        };
        assert_eq!(documents[0].position, 2);
        let third = svc.submit(&sub(3, 2)).unwrap();
        assert_ne!(first.doc_id, third.doc_id);
        assert!(svc.next("nobody").is_err());
    }

    #[test]
    fn payloads_are_blind() {
        let svc = service(5, 3);
        let json = serde_json::to_string(&svc.next("ann1").unwrap()).unwrap();
        for banned in ["distance", "verdict", "treated", "control", "doc_id", "gender"] {
            assert!(!json.contains(banned), "{banned} in {json}");
        }
    }

    #[test]
    fn order_is_randomized_per_annotator() {
        let svc = service(60, 3);
        let firsts: Vec<bool> = svc.sessions["ann0"].queue.iter().map(|s| s.treated_first).collect();
        let t = firsts.iter().filter(|&&b| b).count();
        assert!(t > 10 && t < 50, "{t}");
    }

    #[test]
    fn export_counts_and_done() {
        let mut svc = service(100, 5);
        run_all(&mut svc, |_, _, s| s + 1);
        for a in svc.annotators() {
            assert!(matches!(svc.next(a).unwrap(), NextUnit::Done { completed: 60 }));
        }
        let e = svc.export();
        assert_eq!(e.similarity.len(), 300);
        assert_eq!(e.agency.len(), 600);
        assert_eq!(svc.progress().pairs_complete, 100);
        assert_eq!(e.agency.iter().filter(|r| r.treated).count(), 300);
    }

    #[test]
    fn practice_is_excluded() {
        let mut svc = AnnotationService::new(
            (0..6).map(pair).collect(),
            vec![AnnotationPair {
                pair_id: "warmup".into(),
                ..pair(99)
            }],
            names(3),
            vec![],
            4,
        )
        .unwrap();
        let NextUnit::Task { practice, .. } = svc.next("ann2").unwrap() else {
            panic!()
        };
        assert!(practice);
        run_all(&mut svc, |_, _, _| 3);
        let e = svc.export();
        assert_eq!(e.similarity.len(), 6 * 3);
        assert!(e.similarity.iter().all(|r| r.pair_id != "warmup"));
    }

    #[test]
    fn resolutions_need_a_reviewer() {
        let mut svc = service(3, 3);
        let r = Resolution {
            reviewer: "ann0".into(),
            pair_id: "p000".into(),
            kind: RatingKind::Similarity,
            doc_id: None,
            value: 4,
            note: None,
        };
        assert!(matches!(svc.resolve(&r), Err(AnnotationError::NotReviewer(_))));
        let ok = svc
            .resolve(&Resolution {
                reviewer: "lead".into(),
                ..r.clone()
            })
            .unwrap();
        assert!(ok.resolution);
        let bad_doc = Resolution {
            reviewer: "lead".into(),
            kind: RatingKind::Agency,
            doc_id: Some("zzz".into()),
            ..r
        };
        assert!(svc.resolve(&bad_doc).is_err());
        assert_eq!(svc.export().resolutions.len(), 1);
        assert!(svc.export().similarity.is_empty());
    }

    #[test]
    fn log_replay_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let mut svc = service(4, 3).with_log(&log).unwrap();
        for _ in 0..4 {
            let NextUnit::Task { pair_id, step, .. } = svc.next("ann1").unwrap() else {
                panic!()
            };
            svc.submit(&Submission {
                annotator: "ann1".into(),
                pair_id,
                step,
                value: 2,
            })
            .unwrap();
        }
        let before = svc.next("ann1").unwrap();
        let resumed = service(4, 3).with_log(&log).unwrap();
        assert_eq!(resumed.next("ann1").unwrap(), before);
        assert_eq!(resumed.records(), svc.records());
        let out = dir.path().join("export.json");
        let e = resumed.export_to(&out).unwrap();
        assert_eq!(AnnotationExport::load(&out).unwrap(), e);
    }

    #[test]
    fn similarity_split() {
        assert_eq!(SimilarityClass::of(5), SimilarityClass::Similar);
        assert_eq!(SimilarityClass::of(4), SimilarityClass::Similar);
        assert_eq!(SimilarityClass::of(3), SimilarityClass::Excluded);
        assert_eq!(SimilarityClass::of(1), SimilarityClass::Dissimilar);
    }

    #[test]
    fn agency_model_runs_on_an_export() {
        let mut svc = service(40, 5);
        // Even pairs similar, odd dissimilar; annotators differ in leniency.
        run_all(&mut svc, |a, p, step| {
            let idx: usize = p[1..].parse().unwrap();
            let lean = a[3..].parse::<u8>().unwrap() % 2;
            match step {
                2 => {
                    if idx % 2 == 0 {
                        5
                    } else {
                        1
                    }
                }
                1 => 2 + lean + (idx % 3 == 0) as u8,
                _ => 3 + lean - (idx % 4 == 0) as u8,
            }
        });
        let fit = agency_model(&svc.export()).unwrap();
        assert_eq!(fit.coefficients.len(), 4);
        assert!(fit.group_variance >= 0.0);
    }
}
