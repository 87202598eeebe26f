use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::tensor::{masked_softmax_rows, Float, Tensor, TensorError};

/// `softmax(Q Kᵀ / √d_k) V` with masked key columns excluded.
///
/// Returns the `n x d_v` output and the `n x m` weights.
pub fn scaled_dot_attention<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    key_mask: &[bool],
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (n, dk) = (q.rows(), q.cols());
    let m = k.rows();
    if k.cols() != dk || v.rows() != m || key_mask.len() != m {
        return Err(TensorError::Shape {
            op: "scaled_dot_attention",
            detail: format!("Q {:?}, K {:?}, V {:?}, mask {}", q.shape(), k.shape(), v.shape(), key_mask.len()),
        });
    }
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    let mut w = vec![T::zero(); n * m];
    T::gemm(n, dk, m, scale, q.data(), false, k.data(), true, T::zero(), &mut w);
    masked_softmax_rows(&mut w, n, m, key_mask)?;
    let weights = Tensor::from_vec(&[n, m], w)?;
    let out = weights.matmul(v, false)?;
    Ok((out, weights))
}

/// Attention weights of one input: per layer, per head, an `L x L` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    seq_len: usize,
    layers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelector {
    All,
    Last,
    Index(usize),
}

impl std::str::FromStr for LayerSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(LayerSelector::All),
            "last" => Ok(LayerSelector::Last),
            n => n
                .parse()
                .map(LayerSelector::Index)
                .map_err(|_| format!("layer selector `{s}` is not all, last or an index")),
        }
    }
}

impl AttentionMap {
    pub(crate) fn new(seq_len: usize) -> Self {
        AttentionMap {
            seq_len,
            layers: Vec::new(),
        }
    }

    pub(crate) fn push_layer(&mut self, heads: Vec<Vec<f64>>) {
        self.layers.push(heads);
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    /// Row-major `L x L` weights of one head.
    pub fn weights(&self, layer: usize, head: usize) -> &[f64] {
        &self.layers[layer][head]
    }

    /// The `[CLS]` query row of every head in `layer`.
    pub fn cls_rows(&self, layer: usize) -> Vec<Vec<f64>> {
        self.layers[layer].iter().map(|h| h[..self.seq_len].to_vec()).collect()
    }

    fn selected(&self, sel: LayerSelector) -> Result<Vec<usize>, EncoderError> {
        let n = self.layers.len();
        match sel {
            LayerSelector::All => Ok((0..n).collect()),
            LayerSelector::Last if n > 0 => Ok(vec![n - 1]),
            LayerSelector::Index(i) if i < n => Ok(vec![i]),
            _ => Err(EncoderError::Config(format!("layer {sel:?} not available in a {n}-layer map"))),
        }
    }

    /// Nested-array document for the selected layers with one label per position.
    pub fn export(
        &self,
        sel: LayerSelector,
        tokens: Vec<String>,
        record_id: Option<String>,
    ) -> Result<AttentionExport, EncoderError> {
        if tokens.len() != self.seq_len {
            return Err(EncoderError::Config(format!(
                "{} token labels for sequence length {}",
                tokens.len(),
                self.seq_len
            )));
        }
        let l = self.seq_len;
        let layers = self
            .selected(sel)?
            .into_iter()
            .map(|i| LayerAttention {
                layer: i,
                heads: self.layers[i]
                    .iter()
                    .map(|h| h.chunks(l).map(<[f64]>::to_vec).collect())
                    .collect(),
            })
            .collect();
        Ok(AttentionExport {
            record_id,
            tokens,
            layers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    pub layer: usize,
    /// `heads[h][query][key]`
    pub heads: Vec<Vec<Vec<f64>>>,
}

/// Serializable attention heatmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub tokens: Vec<String>,
    pub layers: Vec<LayerAttention>,
}

impl AttentionExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("attention export serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EncoderError> {
        serde_json::from_str(s).map_err(|e| EncoderError::Config(format!("attention document: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{
        build_vocabulary, embed_formula, tokenize_crystal, BinSpec, ElementEmbeddingTable, InfoLayout,
        InformaticsFields,
    };
    use crate::encoder::{EncoderConfig, EncoderState, Mode, ModelInput};
    use crate::grammar::parse_formula;
    use crate::tensor::Graph;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn single_key() {
        let (o, w) = scaled_dot_attention(&t(&[1, 2], vec![1.0, 0.0]), &t(&[1, 2], vec![1.0, 0.0]), &t(&[1, 2], vec![3.0, 7.0]), &[true]).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(o.data(), &[3.0, 7.0]);
    }

    #[test]
    fn identical_keys_split_evenly() {
        let k = t(&[2, 2], vec![0.3, -1.0, 0.3, -1.0]);
        let q = t(&[3, 2], vec![1.0, 2.0, -4.0, 0.5, 0.0, 0.0]);
        let (_, w) = scaled_dot_attention(&q, &k, &k, &[true, true]).unwrap();
        assert!(w.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn two_key_oracle() {
        let sigma = (1.0f64 / 2f64.sqrt()).exp() / ((1.0f64 / 2f64.sqrt()).exp() + 1.0);
        assert!((sigma - 0.669762).abs() < 1e-6);
        let eye = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let (o, w) = scaled_dot_attention(&t(&[1, 2], vec![1.0, 0.0]), &eye, &eye, &[true, true]).unwrap();
        assert!((w.data()[0] - sigma).abs() < 1e-15 && (w.data()[1] - (1.0 - sigma)).abs() < 1e-15);
        assert!((o.data()[0] - sigma).abs() < 1e-15 && (o.data()[1] - (1.0 - sigma)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = t(&[2, 2], vec![1.0; 4]);
        assert!(matches!(scaled_dot_attention(&a, &a, &a, &[false, false]), Err(TensorError::DegenerateMask { .. })));
        assert!(scaled_dot_attention(&a, &t(&[2, 3], vec![1.0; 6]), &a, &[true, true]).is_err());
        assert!(scaled_dot_attention(&a, &a, &a, &[true]).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_distributions_and_outputs_stay_in_the_hull(
            vals in proptest::collection::vec(-3.0f64..3.0, 3 * 4 + 5 * 4 + 5 * 3),
            mask in proptest::collection::vec(any::<bool>(), 5),
        ) {
            prop_assume!(mask.iter().any(|&m| m));
            let q = t(&[3, 4], vals[..12].to_vec());
            let k = t(&[5, 4], vals[12..32].to_vec());
            let v = t(&[5, 3], vals[32..].to_vec());
            let (o, w) = scaled_dot_attention(&q, &k, &v, &mask).unwrap();
            for r in 0..3 {
                let row = w.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, &m) in mask.iter().enumerate() {
                    if !m { prop_assert_eq!(row[j], 0.0); }
                }
                for c in 0..3 {
                    let kept = (0..5).filter(|&j| mask[j]).map(|j| v.at(j, c));
                    let (lo, hi) = kept.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
                    prop_assert!(o.at(r, c) >= lo - 1e-12 && o.at(r, c) <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn model_maps_export_and_round_trip() {
        let vocab = build_vocabulary(InfoLayout::none(), BinSpec::default(), &[]);
        let comp = parse_formula("SrTiO3").unwrap();
        let input = ModelInput {
            seq: tokenize_crystal(221, &comp, &InformaticsFields::default(), &vocab).unwrap(),
            formula: embed_formula(&comp, &ElementEmbeddingTable::synthetic(0)).unwrap(),
            record_id: Some("sto".into()),
        };
        let mut config = EncoderConfig::desk(vocab.len(), 33);
        config.n_heads = 8;
        let state = EncoderState::<f64>::new(config, 7).unwrap();
        let mut g = Graph::new();
        let out = state
            .forward_recording(&mut g, std::slice::from_ref(&input), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let maps = out.attention_maps(&g, 8).unwrap();
        let map = &maps[0];
        assert_eq!((map.n_layers(), map.n_heads(), map.seq_len()), (2, 8, 33));
        for layer in 0..2 {
            for head in 0..8 {
                for row in map.weights(layer, head).chunks(33) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    for (j, &m) in input.seq.attention_mask.iter().enumerate() {
                        if !m {
                            assert_eq!(row[j], 0.0);
                        }
                    }
                }
            }
        }
        assert_eq!(map.cls_rows(1).len(), 8);
        assert_eq!(map.cls_rows(1)[0].len(), 33);

        let labels: Vec<String> = input.seq.ids.iter().map(|&i| vocab.label(i)).collect();
        let doc = map.export(LayerSelector::Last, labels.clone(), input.record_id.clone()).unwrap();
        assert_eq!(doc.layers.len(), 1);
        assert_eq!(doc.layers[0].heads.len(), 8);
        assert_eq!(doc.layers[0].heads[0].len(), 33);
        let back = AttentionExport::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        for head in &back.layers[0].heads {
            for row in head {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        assert!(map.export(LayerSelector::Index(5), labels.clone(), None).is_err());
        assert!(map.export(LayerSelector::All, labels[1..].to_vec(), None).is_err());
        assert_eq!("last".parse::<LayerSelector>(), Ok(LayerSelector::Last));
    }
}
