//! Pairwise overlap scoring.
//!
//! An [`OverlapMatrix`] holds, for one room type of one property, the
//! probability that each pair of images shows overlapping content of the same
//! physical room. Scores come from a [`ScorerBackend`]:
//!
//! * embedding backends ([`EncoderHead`]) split scoring into a per-image
//!   encoder and a cheap pairwise head. Each image is encoded exactly once,
//!   even under concurrent pair evaluation, and each unordered pair is scored
//!   once.
//! * direct backends ([`PairScorer`]) serve pair scores without an encoder,
//!   for example precomputed score files or the synthetic oracle.

mod cache;
mod head;
mod scores;

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use thiserror::Error;

pub use cache::{read_embedding_cache, write_embedding_cache, CACHE_MAGIC, CACHE_VERSION};
pub use head::{head_score, load_head_weights, Activation, DenseLayer, HeadWeights, LinearHead};
pub use scores::{load_precomputed_scores, write_pair_scores, PairScores};

#[derive(Debug, Clone, Error)]
pub enum OverlapError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("backend failure on {subject}: {message}")]
    BackendFailure { subject: String, message: String },
    #[error("no score for pair ({a}, {b})")]
    MissingScore { a: String, b: String },
    #[error("malformed score row {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("score {score} for pair ({a}, {b}) is outside [0,1]")]
    OutOfRangeScore { a: String, b: String, score: f64 },
    #[error("invalid head weights: {0}")]
    InvalidWeights(String),
    #[error("embedding cache: bad magic or header")]
    MagicMismatch,
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: Arc<io::Error>,
    },
}

impl OverlapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        OverlapError::Io {
            path: path.into(),
            source: Arc::new(source),
        }
    }
}

/// Feature vector of one image. Stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub image_id: String,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(image_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Embedding {
            image_id: image_id.into(),
            vector,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|v| v.is_finite())
    }
}

/// Image reference handed to encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub image_id: String,
    pub uri: String,
}

impl ImageRef {
    pub fn new(image_id: impl Into<String>, uri: impl Into<String>) -> Self {
        ImageRef {
            image_id: image_id.into(),
            uri: uri.into(),
        }
    }
}

/// Encoder plus pairwise head.
pub trait EncoderHead: Send + Sync {
    fn embed(&self, image_id: &str, uri: &str) -> Result<Embedding, OverlapError>;
    fn head(&self, a: &Embedding, b: &Embedding) -> Result<f64, OverlapError>;
}

/// Direct pair scorer. Implementations must be symmetric in `(a, b)`.
pub trait PairScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64, OverlapError>;
}

pub enum ScorerBackend {
    Embedding(Box<dyn EncoderHead>),
    Direct(Box<dyn PairScorer>),
}

impl ScorerBackend {
    pub fn embedding(backend: impl EncoderHead + 'static) -> Self {
        ScorerBackend::Embedding(Box::new(backend))
    }

    pub fn direct(backend: impl PairScorer + 'static) -> Self {
        ScorerBackend::Direct(Box::new(backend))
    }
}

/// Encoder and head invocation counts for one matrix build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallAccounting {
    pub encoder_calls: usize,
    pub head_calls: usize,
}

impl CallAccounting {
    /// Cost of scoring every pair with an unsplit two-branch network that
    /// re-encodes both images for each pair.
    pub fn naive(n: usize) -> Self {
        let pairs = pair_count(n);
        CallAccounting {
            encoder_calls: 2 * pairs,
            head_calls: pairs,
        }
    }
}

/// C(n, 2).
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Symmetric n×n overlap scores with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl OverlapMatrix {
    /// Builds a matrix from upper-triangle scores produced by `f(i, j)` for
    /// `i < j`. The diagonal is fixed at 1.
    pub fn from_pairs<E>(
        ids: Vec<String>,
        mut f: impl FnMut(usize, usize) -> Result<f64, E>,
    ) -> Result<Self, E> {
        let n = ids.len();
        let mut scores = vec![0.0; n * n];
        for i in 0..n {
            scores[i * n + i] = 1.0;
            for j in i + 1..n {
                let s = f(i, j)?;
                scores[i * n + j] = s;
                scores[j * n + i] = s;
            }
        }
        Ok(OverlapMatrix { ids, scores })
    }

    /// Builds from a full row-major matrix after checking the invariants.
    pub fn from_dense(ids: Vec<String>, scores: Vec<f64>) -> Result<Self, OverlapError> {
        let n = ids.len();
        if scores.len() != n * n {
            return Err(OverlapError::DimensionMismatch {
                expected: n * n,
                actual: scores.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let s = scores[i * n + j];
                let bad = !(0.0..=1.0).contains(&s)
                    || s != scores[j * n + i]
                    || (i == j && s != 1.0);
                if bad {
                    return Err(OverlapError::OutOfRangeScore {
                        a: ids[i].clone(),
                        b: ids[j].clone(),
                        score: s,
                    });
                }
            }
        }
        Ok(OverlapMatrix { ids, scores })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.scores[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Lookup table from id to row index.
    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// The matrix restricted to `rows`, in the given order.
    pub fn select(&self, rows: &[usize]) -> OverlapMatrix {
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let scores = rows
            .iter()
            .flat_map(|&r| rows.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        OverlapMatrix { ids, scores }
    }

    /// Upper-triangle iterator `(i, j, score)` for `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.ids.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.get(i, j))))
    }
}

fn check_score(a: &str, b: &str, score: f64) -> Result<f64, OverlapError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(OverlapError::OutOfRangeScore {
            a: a.to_owned(),
            b: b.to_owned(),
            score,
        })
    }
}

/// Per-image embedding slots with exactly-once initialization. Concurrent
/// requests for the same id block on the same slot instead of re-encoding.
struct EmbeddingSlots<'a> {
    images: &'a [ImageRef],
    slots: Vec<OnceLock<Result<Arc<Embedding>, OverlapError>>>,
    encoder_calls: AtomicUsize,
    dim: OnceLock<usize>,
}

impl<'a> EmbeddingSlots<'a> {
    fn new(images: &'a [ImageRef]) -> Self {
        EmbeddingSlots {
            images,
            slots: (0..images.len()).map(|_| OnceLock::new()).collect(),
            encoder_calls: AtomicUsize::new(0),
            dim: OnceLock::new(),
        }
    }

    fn get(&self, encoder: &dyn EncoderHead, i: usize) -> Result<Arc<Embedding>, OverlapError> {
        self.slots[i]
            .get_or_init(|| {
                let img = &self.images[i];
                self.encoder_calls.fetch_add(1, Ordering::Relaxed);
                let e = encoder.embed(&img.image_id, &img.uri)?;
                if e.dim() == 0 || !e.is_finite() {
                    return Err(OverlapError::BackendFailure {
                        subject: img.image_id.clone(),
                        message: "embedding is empty or not finite".into(),
                    });
                }
                let d = *self.dim.get_or_init(|| e.dim());
                if d != e.dim() {
                    return Err(OverlapError::DimensionMismatch {
                        expected: d,
                        actual: e.dim(),
                    });
                }
                Ok(Arc::new(e))
            })
            .clone()
    }
}

/// Scores every unordered pair of `images` and assembles the matrix.
///
/// `parallelism` > 1 evaluates pairs on a dedicated thread pool of that size.
/// The result is bitwise identical for any `parallelism`: every pair is
/// computed once from cached inputs and written to a fixed slot.
pub fn build_overlap_matrix(
    images: &[ImageRef],
    backend: &ScorerBackend,
    parallelism: usize,
) -> Result<(OverlapMatrix, CallAccounting), OverlapError> {
    let n = images.len();
    let mut seen = std::collections::HashSet::with_capacity(n);
    for img in images {
        if !seen.insert(img.image_id.as_str()) {
            return Err(OverlapError::DuplicateId(img.image_id.clone()));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();

    let slots = EmbeddingSlots::new(images);
    let head_calls = AtomicUsize::new(0);
    let score_pair = |&(i, j): &(usize, usize)| -> Result<f64, OverlapError> {
        let (a, b) = (&images[i].image_id, &images[j].image_id);
        let s = match backend {
            ScorerBackend::Embedding(enc) => {
                let ea = slots.get(enc.as_ref(), i)?;
                let eb = slots.get(enc.as_ref(), j)?;
                head_calls.fetch_add(1, Ordering::Relaxed);
                enc.head(&ea, &eb)?
            }
            ScorerBackend::Direct(scorer) => {
                head_calls.fetch_add(1, Ordering::Relaxed);
                scorer.score(a, b)?
            }
        };
        check_score(a, b, s)
    };

    let scored: Vec<f64> = if parallelism > 1 && pairs.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| OverlapError::BackendFailure {
                subject: "thread pool".into(),
                message: e.to_string(),
            })?;
        pool.install(|| pairs.par_iter().map(score_pair).collect::<Result<_, _>>())?
    } else {
        pairs.iter().map(score_pair).collect::<Result<_, _>>()?
    };

    // Images never touched by a pair (n == 1) still get encoded, so every
    // embedding backend sees each image exactly once.
    if let ScorerBackend::Embedding(enc) = backend {
        for i in 0..n {
            slots.get(enc.as_ref(), i)?;
        }
    }

    let mut it = scored.into_iter();
    let ids = images.iter().map(|img| img.image_id.clone()).collect();
    let matrix = OverlapMatrix::from_pairs(ids, |_, _| Ok::<_, OverlapError>(it.next().expect("one score per pair")))?;
    Ok((
        matrix,
        CallAccounting {
            encoder_calls: slots.encoder_calls.load(Ordering::Relaxed),
            head_calls: head_calls.load(Ordering::Relaxed),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Encoder that counts invocations per id and sleeps a little so
    /// concurrent requests overlap.
    struct CountingEncoder {
        per_id: Mutex<HashMap<String, usize>>,
    }

    impl EncoderHead for CountingEncoder {
        fn embed(&self, image_id: &str, _uri: &str) -> Result<Embedding, OverlapError> {
            std::thread::sleep(std::time::Duration::from_millis(2));
            *self.per_id.lock().unwrap().entry(image_id.to_owned()).or_default() += 1;
            let x = image_id.len() as f32 / 10.0;
            Ok(Embedding::new(image_id, vec![x, 1.0 - x]))
        }

        fn head(&self, a: &Embedding, b: &Embedding) -> Result<f64, OverlapError> {
            let dot: f32 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
            Ok(1.0 / (1.0 + (-f64::from(dot)).exp()))
        }
    }

    fn images(n: usize) -> Vec<ImageRef> {
        (0..n).map(|i| ImageRef::new(format!("img{}", "x".repeat(i % 5) + &i.to_string()), "")).collect()
    }

    fn counting() -> (Arc<CountingEncoder>, ScorerBackend) {
        struct Shared(Arc<CountingEncoder>);
        impl EncoderHead for Shared {
            fn embed(&self, id: &str, uri: &str) -> Result<Embedding, OverlapError> {
                self.0.embed(id, uri)
            }
            fn head(&self, a: &Embedding, b: &Embedding) -> Result<f64, OverlapError> {
                self.0.head(a, b)
            }
        }
        let enc = Arc::new(CountingEncoder {
            per_id: Mutex::new(HashMap::new()),
        });
        (enc.clone(), ScorerBackend::embedding(Shared(enc)))
    }

    #[test]
    fn twelve_images_use_twelve_encoder_calls() {
        let (_, backend) = counting();
        let (m, acct) = build_overlap_matrix(&images(12), &backend, 1).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(acct, CallAccounting { encoder_calls: 12, head_calls: 66 });
        let naive = CallAccounting::naive(12);
        assert_eq!(naive.encoder_calls, 132);
        let reduction = 1.0 - acct.encoder_calls as f64 / naive.encoder_calls as f64;
        assert!((reduction - 0.909).abs() < 1e-3);
    }

    #[test]
    fn single_image_matrix() {
        let (_, backend) = counting();
        let (m, acct) = build_overlap_matrix(&images(1), &backend, 1).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(acct, CallAccounting { encoder_calls: 1, head_calls: 0 });
    }

    #[test]
    fn concurrent_build_coalesces_and_is_bitwise_stable() {
        let imgs = images(20);
        let (_, serial_backend) = counting();
        let (serial, _) = build_overlap_matrix(&imgs, &serial_backend, 1).unwrap();
        for threads in [2, 4, 8] {
            let (enc, backend) = counting();
            let (m, acct) = build_overlap_matrix(&imgs, &backend, threads).unwrap();
            assert_eq!(acct.encoder_calls, 20);
            assert_eq!(acct.head_calls, 190);
            assert!(enc.per_id.lock().unwrap().values().all(|&c| c == 1));
            for (a, b) in m.scores.iter().zip(&serial.scores) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let (_, backend) = counting();
        let imgs = vec![ImageRef::new("a", ""), ImageRef::new("a", "")];
        assert!(matches!(
            build_overlap_matrix(&imgs, &backend, 1),
            Err(OverlapError::DuplicateId(_))
        ));
    }

    struct Failing;
    impl PairScorer for Failing {
        fn score(&self, a: &str, b: &str) -> Result<f64, OverlapError> {
            if b == "c" {
                Err(OverlapError::BackendFailure {
                    subject: format!("({a}, {b})"),
                    message: "boom".into(),
                })
            } else {
                Ok(0.5)
            }
        }
    }

    #[test]
    fn backend_failures_propagate() {
        let backend = ScorerBackend::direct(Failing);
        let imgs = vec![ImageRef::new("a", ""), ImageRef::new("b", ""), ImageRef::new("c", "")];
        match build_overlap_matrix(&imgs, &backend, 1) {
            Err(OverlapError::BackendFailure { subject, .. }) => assert!(subject.contains('c')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dense_constructor_checks_invariants() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(OverlapMatrix::from_dense(ids.clone(), vec![1.0, 0.3, 0.3, 1.0]).is_ok());
        assert!(OverlapMatrix::from_dense(ids.clone(), vec![1.0, 0.3, 0.4, 1.0]).is_err());
        assert!(OverlapMatrix::from_dense(ids.clone(), vec![0.9, 0.3, 0.3, 1.0]).is_err());
        assert!(OverlapMatrix::from_dense(ids, vec![1.0, 1.3, 1.3, 1.0]).is_err());
    }

    #[test]
    fn select_reorders() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = OverlapMatrix::from_pairs(ids, |i, j| Ok::<_, ()>((i + j) as f64 / 10.0)).unwrap();
        let s = m.select(&[2, 0]);
        assert_eq!(s.ids(), ["c", "a"]);
        assert_eq!(s.get(0, 1), 0.2);
        assert_eq!(s.get(1, 1), 1.0);
    }
}
