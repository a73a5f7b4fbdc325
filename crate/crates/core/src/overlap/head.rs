use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderHead, Embedding, OverlapError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Affine map `activation(W x + b)` with `W` stored as `out` rows of `in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| {
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                self.activation.apply(z)
            })
            .collect()
    }
}

/// Dense layers applied to the element-wise product of two embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub layers: Vec<DenseLayer>,
}

impl HeadWeights {
    /// Input dimension of the first layer.
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    /// Checks that layers chain, every row is the right width, values are
    /// finite and the head ends in a single sigmoid unit.
    pub fn validate(&self) -> Result<(), OverlapError> {
        let bad = |msg: String| Err(OverlapError::InvalidWeights(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        let mut width = self.input_dim();
        if width == 0 {
            return bad("first layer has zero input width".into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.output_dim() == 0 || layer.bias.len() != layer.output_dim() {
                return bad(format!("layer {l}: bias length {} != rows {}", layer.bias.len(), layer.output_dim()));
            }
            if layer.weights.iter().any(|row| row.len() != width) {
                return bad(format!("layer {l}: expected rows of width {width}"));
            }
            let finite = layer.weights.iter().flatten().chain(&layer.bias).all(|v| v.is_finite());
            if !finite {
                return bad(format!("layer {l}: non-finite value"));
            }
            width = layer.output_dim();
        }
        let last = self.layers.last().expect("non-empty");
        if last.output_dim() != 1 || last.activation != Activation::Sigmoid {
            return bad("final layer must be a single sigmoid unit".into());
        }
        Ok(())
    }
}

/// Overlap probability for an embedding pair.
///
/// The head sees only `e1 ⊙ e2`, so the score is symmetric in its arguments
/// by construction.
pub fn head_score(e1: &Embedding, e2: &Embedding, w: &HeadWeights) -> Result<f64, OverlapError> {
    if e1.dim() != e2.dim() {
        return Err(OverlapError::DimensionMismatch {
            expected: e1.dim(),
            actual: e2.dim(),
        });
    }
    if w.input_dim() != e1.dim() {
        return Err(OverlapError::DimensionMismatch {
            expected: w.input_dim(),
            actual: e1.dim(),
        });
    }
    let mut x: Vec<f64> = e1
        .vector
        .iter()
        .zip(&e2.vector)
        .map(|(a, b)| f64::from(*a) * f64::from(*b))
        .collect();
    for layer in &w.layers {
        x = layer.forward(&x);
    }
    Ok(x[0])
}

pub fn load_head_weights(path: impl AsRef<Path>) -> Result<HeadWeights, OverlapError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| OverlapError::io(path, e))?;
    let w: HeadWeights = serde_json::from_str(&text)
        .map_err(|e| OverlapError::InvalidWeights(format!("{}: {e}", path.display())))?;
    w.validate()?;
    Ok(w)
}

/// Embedding backend serving cached feature vectors through a dense head.
#[derive(Debug, Clone)]
pub struct LinearHead {
    weights: HeadWeights,
    embeddings: HashMap<String, Embedding>,
}

impl LinearHead {
    pub fn new(weights: HeadWeights, embeddings: Vec<Embedding>) -> Result<Self, OverlapError> {
        weights.validate()?;
        let d = weights.input_dim();
        let mut table = HashMap::with_capacity(embeddings.len());
        for e in embeddings {
            if e.dim() != d {
                return Err(OverlapError::DimensionMismatch {
                    expected: d,
                    actual: e.dim(),
                });
            }
            if let Some(prev) = table.insert(e.image_id.clone(), e) {
                return Err(OverlapError::DuplicateId(prev.image_id));
            }
        }
        Ok(LinearHead {
            weights,
            embeddings: table,
        })
    }

    pub fn weights(&self) -> &HeadWeights {
        &self.weights
    }
}

impl EncoderHead for LinearHead {
    fn embed(&self, image_id: &str, _uri: &str) -> Result<Embedding, OverlapError> {
        self.embeddings
            .get(image_id)
            .cloned()
            .ok_or_else(|| OverlapError::BackendFailure {
                subject: image_id.to_owned(),
                message: "no cached embedding".into(),
            })
    }

    fn head(&self, a: &Embedding, b: &Embedding) -> Result<f64, OverlapError> {
        head_score(a, b, &self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(weights: Vec<f64>, bias: f64) -> HeadWeights {
        HeadWeights {
            layers: vec![DenseLayer {
                weights: vec![weights],
                bias: vec![bias],
                activation: Activation::Sigmoid,
            }],
        }
    }

    #[test]
    fn zero_weights_give_one_half() {
        let w = HeadWeights {
            layers: vec![
                DenseLayer {
                    weights: vec![vec![0.0; 3]; 4],
                    bias: vec![0.0; 4],
                    activation: Activation::Relu,
                },
                DenseLayer {
                    weights: vec![vec![0.0; 4]],
                    bias: vec![0.0],
                    activation: Activation::Sigmoid,
                },
            ],
        };
        w.validate().unwrap();
        let a = Embedding::new("a", vec![0.3, -2.0, 5.0]);
        let b = Embedding::new("b", vec![1.0, 4.0, -0.5]);
        assert_eq!(head_score(&a, &b, &w).unwrap(), 0.5);
    }

    #[test]
    fn unit_weights_hand_value() {
        // sigmoid(1*1 + 1*1) = 1 / (1 + e^-2)
        let w = single(vec![1.0, 1.0], 0.0);
        let e = Embedding::new("a", vec![1.0, 1.0]);
        let s = head_score(&e, &e, &w).unwrap();
        assert!((s - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let w = single(vec![1.0, 1.0], 0.0);
        let a = Embedding::new("a", vec![1.0, 1.0]);
        let b = Embedding::new("b", vec![1.0, 1.0, 1.0]);
        assert!(matches!(head_score(&a, &b, &w), Err(OverlapError::DimensionMismatch { .. })));
        assert!(matches!(head_score(&b, &b, &w), Err(OverlapError::DimensionMismatch { .. })));
    }

    #[test]
    fn weight_validation() {
        let mut w = single(vec![1.0, 1.0], 0.0);
        w.layers[0].activation = Activation::Relu;
        assert!(w.validate().is_err());
        let w = HeadWeights {
            layers: vec![
                DenseLayer {
                    weights: vec![vec![1.0, 1.0]; 3],
                    bias: vec![0.0; 3],
                    activation: Activation::Relu,
                },
                DenseLayer {
                    weights: vec![vec![1.0, 1.0]],
                    bias: vec![0.0],
                    activation: Activation::Sigmoid,
                },
            ],
        };
        assert!(w.validate().is_err(), "second layer rows must have width 3");
        assert!(HeadWeights { layers: vec![] }.validate().is_err());
    }

    #[test]
    fn weights_document_round_trip() {
        let w = single(vec![0.25, -1.5], 0.125);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        std::fs::write(&p, serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(load_head_weights(&p).unwrap(), w);
        assert!(serde_json::to_string(&w).unwrap().contains("\"sigmoid\""));
    }

    proptest! {
        #[test]
        fn head_is_symmetric(
            a in prop::collection::vec(-3.0f32..3.0, 4),
            b in prop::collection::vec(-3.0f32..3.0, 4),
            hidden in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 3),
            out in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let w = HeadWeights {
                layers: vec![
                    DenseLayer { weights: hidden, bias: vec![0.1, -0.2, 0.3], activation: Activation::Relu },
                    DenseLayer { weights: vec![out], bias: vec![0.05], activation: Activation::Sigmoid },
                ],
            };
            let ea = Embedding::new("a", a);
            let eb = Embedding::new("b", b);
            let s1 = head_score(&ea, &eb, &w).unwrap();
            let s2 = head_score(&eb, &ea, &w).unwrap();
            prop_assert_eq!(s1.to_bits(), s2.to_bits());
            // sigmoid saturates in f64 for large logits
            prop_assert!((0.0..=1.0).contains(&s1));
        }
    }
}
