//! Pair score files: CSV with header `image_a,image_b,score`, one row per
//! unordered pair.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use super::{OverlapError, OverlapMatrix, PairScorer};

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// Stored pair scores keyed by unordered pair (smaller id first).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScores {
    scores: HashMap<(String, String), f64>,
}

impl PairScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, score: f64) -> Result<(), OverlapError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(OverlapError::OutOfRangeScore {
                a: a.to_owned(),
                b: b.to_owned(),
                score,
            });
        }
        self.scores.insert(key(a, b), score);
        Ok(())
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.scores.get(&key(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Adds every upper-triangle pair of `m`.
    pub fn extend_from_matrix(&mut self, m: &OverlapMatrix) {
        for (i, j, s) in m.pairs() {
            self.scores.insert(key(&m.ids()[i], &m.ids()[j]), s);
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OverlapError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| OverlapError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self, OverlapError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header_ok = rdr
            .headers()
            .map(|h| h.iter().collect::<Vec<_>>() == ["image_a", "image_b", "score"])
            .unwrap_or(false);
        if !header_ok {
            return Err(OverlapError::MalformedRow {
                line: 1,
                message: "expected header `image_a,image_b,score`".into(),
            });
        }
        let mut out = PairScores::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| OverlapError::MalformedRow {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let malformed = |message: String| OverlapError::MalformedRow { line, message };
            if rec.len() != 3 {
                return Err(malformed(format!("expected 3 fields, found {}", rec.len())));
            }
            let (a, b) = (&rec[0], &rec[1]);
            if a.is_empty() || b.is_empty() || a == b {
                return Err(malformed("pair needs two distinct image ids".into()));
            }
            let score: f64 = rec[2]
                .parse()
                .map_err(|_| malformed(format!("score `{}` is not a number", &rec[2])))?;
            if !score.is_finite() || !(0.0..=1.0).contains(&score) {
                return Err(OverlapError::OutOfRangeScore {
                    a: a.to_owned(),
                    b: b.to_owned(),
                    score,
                });
            }
            if let Some(prev) = out.get(a, b) {
                if prev != score {
                    return Err(malformed(format!("conflicting duplicate score for ({a}, {b})")));
                }
            }
            out.scores.insert(key(a, b), score);
        }
        Ok(out)
    }

    /// The matrix over `image_ids`; every unordered pair must be present.
    pub fn matrix(&self, image_ids: &[String]) -> Result<OverlapMatrix, OverlapError> {
        OverlapMatrix::from_pairs(image_ids.to_vec(), |i, j| self.score(&image_ids[i], &image_ids[j]))
    }
}

impl PairScorer for PairScores {
    fn score(&self, a: &str, b: &str) -> Result<f64, OverlapError> {
        self.get(a, b).ok_or_else(|| {
            let (a, b) = key(a, b);
            OverlapError::MissingScore { a, b }
        })
    }
}

pub fn load_precomputed_scores(path: impl AsRef<Path>, image_ids: &[String]) -> Result<OverlapMatrix, OverlapError> {
    PairScores::load(path)?.matrix(image_ids)
}

/// Writes the upper triangle of each matrix, in matrix order. Scores use the
/// shortest decimal form that parses back to the same `f64`.
pub fn write_pair_scores<'a>(
    matrices: impl IntoIterator<Item = &'a OverlapMatrix>,
    path: impl AsRef<Path>,
) -> Result<(), OverlapError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| {
        let e = match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        };
        OverlapError::io(path, e)
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["image_a", "image_b", "score"]).map_err(io_err)?;
    for m in matrices {
        for (i, j, s) in m.pairs() {
            let (a, b) = key(&m.ids()[i], &m.ids()[j]);
            w.write_record([a.as_str(), b.as_str(), &s.to_string()]).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| OverlapError::io(path, e))
}
