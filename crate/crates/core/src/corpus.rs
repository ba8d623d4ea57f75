//! Embeddings, trial lists and score files.
//!
//! All three formats are UTF-8 text, one record per line, space separated:
//!
//! ```text
//! <utt-id> <speaker-id> <v1> ... <vl>      embeddings
//! <enroll-id> <test-id> [target|nontarget] trials
//! <enroll-id> <test-id> <score>            scores
//! ```
//!
//! Floats are written with the shortest representation that parses back to the same
//! `f64`, so save/load round trips are bit-exact.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_f64, push_row, read_to_string, write_string};

/// Hypothesis tag of a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// Same speaker (`target`).
    Same,
    /// Different speakers (`nontarget`).
    Different,
}

impl Label {
    pub fn is_same(self) -> bool {
        matches!(self, Label::Same)
    }

    /// 1.0 for `Same`, 0.0 for `Different`.
    pub fn as_target(self) -> f64 {
        if self.is_same() {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Same => "target",
            Label::Different => "nontarget",
        })
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "target" => Ok(Label::Same),
            "nontarget" => Ok(Label::Different),
            _ => Err(()),
        }
    }
}

/// Labeled collection of fixed-dimension embeddings, one row per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    speakers: Vec<String>,
    vectors: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, speakers: Vec<String>, vectors: DMatrix<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::DegenerateCorpus("embedding set is empty"));
        }
        if vectors.ncols() == 0 {
            return Err(Error::Shape {
                what: "embedding dimension",
                expected: 1,
                found: 0,
            });
        }
        for (what, n) in [("speaker labels", speakers.len()), ("vector rows", vectors.nrows())] {
            if n != ids.len() {
                return Err(Error::Shape {
                    what,
                    expected: ids.len(),
                    found: n,
                });
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (k, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingSet {
            ids,
            speakers,
            vectors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, row: usize) -> DVector<f64> {
        self.vectors.row(row).transpose()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Utterance rows grouped by speaker, speakers in order of first appearance.
    pub fn speaker_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (row, spk) in self.speakers.iter().enumerate() {
            let k = *slot.entry(spk.as_str()).or_insert_with(|| {
                order.push((spk.clone(), Vec::new()));
                order.len() - 1
            });
            order[k].1.push(row);
        }
        order
    }

    pub fn num_speakers(&self) -> usize {
        self.speaker_groups().len()
    }

    /// New set holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let speakers = rows.iter().map(|&r| self.speakers[r].clone()).collect();
        let vectors = self.vectors.select_rows(rows);
        EmbeddingSet::new(ids, speakers, vectors)
    }

    /// Same ids and speakers with replaced vectors (any dimension).
    pub fn with_vectors(&self, vectors: DMatrix<f64>) -> Result<Self> {
        EmbeddingSet::new(self.ids.clone(), self.speakers.clone(), vectors)
    }
}

/// One verification trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Option<Label>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Option<Label>) -> Self {
        Trial {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
        }
    }
}

pub type TrialList = Vec<Trial>;

/// Trials with one finite score each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(trials: Vec<Trial>, scores: Vec<f64>) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::Shape {
                what: "scores per trial",
                expected: trials.len(),
                found: scores.len(),
            });
        }
        if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::parse(k + 1, "score is not finite"));
        }
        Ok(ScoreSet { trials, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Target and non-target scores; errors if any trial is unlabeled.
    pub fn split_by_label(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (k, (t, &s)) in self.trials.iter().zip(&self.scores).enumerate() {
            match t.label {
                Some(Label::Same) => tar.push(s),
                Some(Label::Different) => non.push(s),
                None => return Err(Error::parse(k + 1, "trial has no label")),
            }
        }
        Ok((tar, non))
    }

    /// Copies labels from `trials` (matched by position, ids must agree).
    pub fn with_labels(mut self, trials: &[Trial]) -> Result<Self> {
        if trials.len() != self.trials.len() {
            return Err(Error::Shape {
                what: "trials in score file",
                expected: trials.len(),
                found: self.trials.len(),
            });
        }
        for (k, (mine, theirs)) in self.trials.iter_mut().zip(trials).enumerate() {
            if mine.enroll_id != theirs.enroll_id || mine.test_id != theirs.test_id {
                return Err(Error::parse(k + 1, "score and trial files disagree on ids"));
            }
            mine.label = theirs.label;
        }
        Ok(self)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    parse_embeddings(&read_to_string(path)?)
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingSet> {
    let mut ids = Vec::new();
    let mut speakers = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (Some(id), Some(spk)) = (toks.next(), toks.next()) else {
            return Err(Error::parse(n, "expected `<utt-id> <speaker-id> <values...>`"));
        };
        let before = data.len();
        for t in toks {
            data.push(parse_f64(t, n)?);
        }
        let got = data.len() - before;
        match dim {
            None if got == 0 => return Err(Error::parse(n, "embedding has no values")),
            None => dim = Some(got),
            Some(d) if d != got => {
                return Err(Error::parse(n, format!("expected {d} values, found {got}")))
            }
            _ => {}
        }
        ids.push(id.to_string());
        speakers.push(spk.to_string());
    }
    let dim = dim.ok_or(Error::DegenerateCorpus("embedding file has no records"))?;
    let vectors = DMatrix::from_row_slice(ids.len(), dim, &data);
    EmbeddingSet::new(ids, speakers, vectors)
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_string(path, &format_embeddings(set))
}

pub fn format_embeddings(set: &EmbeddingSet) -> String {
    let mut out = String::new();
    for (k, (id, spk)) in set.ids.iter().zip(&set.speakers).enumerate() {
        out.push_str(id);
        out.push(' ');
        out.push_str(spk);
        out.push(' ');
        push_row(&mut out, set.vectors.row(k).iter());
    }
    out
}

/// Loads a trial list. When `set` is given, every referenced id must exist in it.
pub fn load_trials(path: &Path, set: Option<&EmbeddingSet>) -> Result<TrialList> {
    parse_trials(&read_to_string(path)?, set)
}

pub fn parse_trials(text: &str, set: Option<&EmbeddingSet>) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 2 || toks.len() > 3 {
            return Err(Error::parse(n, "expected `<enroll-id> <test-id> [target|nontarget]`"));
        }
        let label = match toks.get(2) {
            None => None,
            Some(t) => Some(
                t.parse::<Label>()
                    .map_err(|_| Error::parse(n, format!("bad label `{t}`")))?,
            ),
        };
        if let Some(set) = set {
            for id in &toks[..2] {
                if set.position(id).is_none() {
                    return Err(Error::MissingReference {
                        line: n,
                        id: id.to_string(),
                    });
                }
            }
        }
        trials.push(Trial::new(toks[0], toks[1], label));
    }
    Ok(trials)
}

pub fn save_trials(trials: &[Trial], path: &Path) -> Result<()> {
    write_string(path, &format_trials(trials))
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.enroll_id);
        out.push(' ');
        out.push_str(&t.test_id);
        if let Some(l) = t.label {
            out.push(' ');
            out.push_str(&l.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn save_scores(scores: &ScoreSet, path: &Path) -> Result<()> {
    write_string(path, &format_scores(scores))
}

pub fn format_scores(scores: &ScoreSet) -> String {
    let mut out = String::new();
    for (t, s) in scores.trials.iter().zip(&scores.scores) {
        out.push_str(&t.enroll_id);
        out.push(' ');
        out.push_str(&t.test_id);
        out.push(' ');
        out.push_str(&fmt_f64(*s));
        out.push('\n');
    }
    out
}

pub fn load_scores(path: &Path) -> Result<ScoreSet> {
    parse_scores(&read_to_string(path)?)
}

pub fn parse_scores(text: &str) -> Result<ScoreSet> {
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 {
            return Err(Error::parse(n, "expected `<enroll-id> <test-id> <score>`"));
        }
        scores.push(parse_f64(toks[2], n)?);
        trials.push(Trial::new(toks[0], toks[1], None));
    }
    ScoreSet::new(trials, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> EmbeddingSet {
        parse_embeddings("u1 spkA 1.0 2.0\nu2 spkB 0.0 1.0\n").unwrap()
    }

    #[test]
    fn parses_embeddings() {
        let set = two_by_two();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dim(), 2);
        assert_eq!(set.vector(0).as_slice(), &[1.0, 2.0]);
        assert_eq!(set.speakers(), &["spkA".to_string(), "spkB".to_string()]);
    }

    #[test]
    fn bad_token_reports_line() {
        let err = parse_embeddings("u1 spkA 1.0 2.0\nu2 spkB 0.0 1.0\nu3 spkC 1.0 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let err = parse_embeddings("u1 a 1 2\nu2 b 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_embeddings("u1 a 1\nu1 b 2\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "u1"));
    }

    #[test]
    fn trial_labels() {
        let set = two_by_two();
        let t = parse_trials("u1 u2 target\nu2 u1\nu1 u1 nontarget\n", Some(&set)).unwrap();
        assert_eq!(t[0].label, Some(Label::Same));
        assert_eq!(t[1].label, None);
        assert_eq!(t[2].label, Some(Label::Different));
    }

    #[test]
    fn trial_unknown_id() {
        let set = two_by_two();
        let err = parse_trials("u1 u2\nu1 u9 target\n", Some(&set)).unwrap_err();
        assert!(matches!(err, Error::MissingReference { line: 2, ref id } if id == "u9"));
        // deferred validation accepts it
        assert_eq!(parse_trials("u1 u9 target\n", None).unwrap().len(), 1);
    }

    #[test]
    fn trial_bad_label() {
        let err = parse_trials("u1 u2 maybe\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn score_line_format() {
        let s = ScoreSet::new(vec![Trial::new("u1", "u2", None)], vec![0.25]).unwrap();
        assert_eq!(format_scores(&s), "u1 u2 0.25\n");
        assert_eq!(parse_scores(&format_scores(&s)).unwrap(), s);
    }

    #[test]
    fn empty_scores_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        save_scores(&ScoreSet::default(), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        assert!(load_scores(&p).unwrap().is_empty());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_embeddings(Path::new("/nonexistent/emb.txt")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn speaker_groups_in_first_appearance_order() {
        let set = parse_embeddings("a s2 1\nb s1 2\nc s2 3\n").unwrap();
        let g = set.speaker_groups();
        assert_eq!(g[0], ("s2".to_string(), vec![0, 2]));
        assert_eq!(g[1], ("s1".to_string(), vec![1]));
    }
}
