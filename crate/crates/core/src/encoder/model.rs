use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::attention::AttentionMap;
use super::{EncoderConfig, EncoderError};
use crate::embedding::{assemble_input, EmbeddedInput, SlotKind, TokenSequence, FORMULA_ROW_DIM, PAD_ID};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Arity of the lattice-parameter head.
pub const LPP_OUTPUTS: usize = 6;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One tokenized crystal together with its formula matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub seq: TokenSequence,
    /// `20 x 201` formula rows.
    pub formula: Tensor<f64>,
    pub record_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub value: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
    pub attention_norm: (ParamId, ParamId),
    pub ffn_inner: (ParamId, ParamId),
    pub ffn_outer: (ParamId, ParamId),
    pub ffn_norm: (ParamId, ParamId),
}

/// Two-layer SiLU regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
}

/// Masked-token head: dense, GELU, layer norm, then the tied token table.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmParams {
    pub dense: (ParamId, ParamId),
    pub norm: (ParamId, ParamId),
    pub output_bias: ParamId,
}

/// All learnable parameters of the encoder and its heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<T> {
    config: EncoderConfig,
    store: ParamStore<T>,
    pub token_table: ParamId,
    pub positions: ParamId,
    pub formula_projection: (ParamId, ParamId),
    pub layers: Vec<LayerParams>,
    pub mlm: MlmParams,
    pub lpp: HeadParams,
    pub finetune: HeadParams,
}

/// Graph handles produced by a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(batch * seq_len) x d_model`
    pub hidden: Var,
    /// `batch x d_model`
    pub cls: Var,
    pub batch: usize,
    pub seq_len: usize,
    attention: Option<Vec<Var>>,
}

impl ForwardOutput {
    /// Per-item attention maps; requires a recording forward pass.
    pub fn attention_maps<T: Float>(&self, g: &Graph<T>, n_heads: usize) -> Result<Vec<AttentionMap>, EncoderError> {
        let vars = self.attention.as_ref().ok_or(EncoderError::RecordingDisabled)?;
        let l = self.seq_len;
        let mut maps: Vec<AttentionMap> = (0..self.batch).map(|_| AttentionMap::new(l)).collect();
        for &v in vars {
            let w = g.attention_weights(v).ok_or(EncoderError::RecordingDisabled)?;
            for (b, map) in maps.iter_mut().enumerate() {
                let heads = (0..n_heads)
                    .map(|h| {
                        let base = (b * n_heads + h) * l * l;
                        w[base..base + l * l].iter().map(|x| x.as_f64()).collect()
                    })
                    .collect();
                map.push_layer(heads);
            }
        }
        Ok(maps)
    }
}

/// Canonical parameter names and shapes, in storage order.
pub(crate) fn parameter_shapes(c: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.d_model;
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("embeddings.token".into(), vec![c.vocab_size, d]),
        ("embeddings.position".into(), vec![c.max_len, d]),
        ("embeddings.formula.weight".into(), vec![FORMULA_ROW_DIM, d]),
        ("embeddings.formula.bias".into(), vec![d]),
    ];
    let linear = |out: &mut Vec<(String, Vec<usize>)>, name: String, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![i, o]));
        out.push((format!("{name}.bias"), vec![o]));
    };
    for l in 0..c.n_layers {
        let p = format!("layers.{l}");
        for part in ["query", "key", "value", "output"] {
            linear(&mut out, format!("{p}.attention.{part}"), d, d);
        }
        out.push((format!("{p}.attention_norm.gain"), vec![d]));
        out.push((format!("{p}.attention_norm.bias"), vec![d]));
        linear(&mut out, format!("{p}.ffn.inner"), d, c.d_ff);
        linear(&mut out, format!("{p}.ffn.outer"), c.d_ff, d);
        out.push((format!("{p}.ffn_norm.gain"), vec![d]));
        out.push((format!("{p}.ffn_norm.bias"), vec![d]));
    }
    linear(&mut out, "heads.mlm.dense".into(), d, d);
    out.push(("heads.mlm.norm.gain".into(), vec![d]));
    out.push(("heads.mlm.norm.bias".into(), vec![d]));
    out.push(("heads.mlm.output_bias".into(), vec![c.vocab_size]));
    linear(&mut out, "heads.lpp.hidden".into(), d, d);
    linear(&mut out, "heads.lpp.output".into(), d, LPP_OUTPUTS);
    linear(&mut out, "heads.finetune.hidden".into(), d, d);
    linear(&mut out, "heads.finetune.output".into(), d, 1);
    out
}

/// Biases and layer-norm parameters are exempt from weight decay.
pub fn is_decay_exempt(name: &str) -> bool {
    name.ends_with("bias") || name.contains("norm.")
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Float> EncoderState<T> {
    /// Fresh parameters: truncated normal (std 0.02) weights, zero biases, unit gains.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with("gain") {
                vec![T::one(); n]
            } else if name.ends_with("bias") {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::from_f64_lossy(truncated_normal(&mut rng, INIT_STD))).collect()
            };
            store.add(name, Tensor::from_vec(&shape, data)?);
        }
        Self::from_store(config, store)
    }

    /// Binds a parameter store whose names and shapes match `config`.
    pub fn from_store(config: EncoderConfig, store: ParamStore<T>) -> Result<Self, EncoderError> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != store.len() {
            return Err(EncoderError::Config(format!(
                "expected {} parameters, found {}",
                expected.len(),
                store.len()
            )));
        }
        for ((name, shape), id) in expected.iter().zip(store.ids()) {
            if store.name(id) != name || store.value(id).shape() != shape.as_slice() {
                return Err(EncoderError::Config(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    store.name(id),
                    store.value(id).shape()
                )));
            }
        }
        let id = |n: &str| store.find(n).expect("parameter present after validation");
        let lin = |n: &str| (id(&format!("{n}.weight")), id(&format!("{n}.bias")));
        let norm = |n: &str| (id(&format!("{n}.gain")), id(&format!("{n}.bias")));
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("layers.{l}");
                LayerParams {
                    query: lin(&format!("{p}.attention.query")),
                    key: lin(&format!("{p}.attention.key")),
                    value: lin(&format!("{p}.attention.value")),
                    output: lin(&format!("{p}.attention.output")),
                    attention_norm: norm(&format!("{p}.attention_norm")),
                    ffn_inner: lin(&format!("{p}.ffn.inner")),
                    ffn_outer: lin(&format!("{p}.ffn.outer")),
                    ffn_norm: norm(&format!("{p}.ffn_norm")),
                }
            })
            .collect();
        let head = |n: &str| HeadParams {
            hidden: lin(&format!("heads.{n}.hidden")),
            output: lin(&format!("heads.{n}.output")),
        };
        Ok(EncoderState {
            token_table: id("embeddings.token"),
            positions: id("embeddings.position"),
            formula_projection: lin("embeddings.formula"),
            layers,
            mlm: MlmParams {
                dense: lin("heads.mlm.dense"),
                norm: norm("heads.mlm.norm"),
                output_bias: id("heads.mlm.output_bias"),
            },
            lpp: head("lpp"),
            finetune: head("finetune"),
            config,
            store,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn cast<U: Float>(&self) -> EncoderState<U> {
        EncoderState::from_store(self.config.clone(), self.store.cast()).expect("same layout")
    }

    /// Embedded input for one record, computed outside the graph.
    pub fn embed(&self, input: &ModelInput) -> Result<EmbeddedInput<T>, EncoderError> {
        let s = &self.store;
        let mut e = assemble_input(
            &input.seq,
            &input.formula,
            s.value(self.token_table),
            s.value(self.formula_projection.0),
            s.value(self.formula_projection.1),
            s.value(self.positions),
        )?;
        e.record_id = input.record_id.clone();
        Ok(e)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, p: (ParamId, ParamId)) -> Result<Var, EncoderError> {
        let w = g.param(&self.store, p.0);
        let b = g.param(&self.store, p.1);
        Ok(g.linear(x, w, b)?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, p: (ParamId, ParamId)) -> Result<Var, EncoderError> {
        let gain = g.param(&self.store, p.0);
        let bias = g.param(&self.store, p.1);
        Ok(g.layer_norm(x, gain, bias)?)
    }

    fn embed_batch(&self, g: &mut Graph<T>, inputs: &[ModelInput]) -> Result<(Var, usize, Vec<bool>), EncoderError> {
        let first = inputs.first().ok_or(EncoderError::EmptyBatch)?;
        let l = first.seq.len();
        if l > self.config.max_len {
            return Err(EncoderError::LengthOverflow {
                len: l,
                max: self.config.max_len,
            });
        }
        let mut token_index = Vec::with_capacity(inputs.len() * l);
        let mut position_index = Vec::with_capacity(inputs.len() * l);
        let mut formula_rows: Vec<T> = Vec::new();
        let mut formula_targets = Vec::new();
        let mut mask = Vec::with_capacity(inputs.len() * l);
        for (b, input) in inputs.iter().enumerate() {
            let seq = &input.seq;
            if seq.len() != l || seq.slots.len() != l || seq.attention_mask.len() != l {
                return Err(EncoderError::RaggedBatch);
            }
            for (pos, (&id, slot)) in seq.ids.iter().zip(&seq.slots).enumerate() {
                let real = id != PAD_ID;
                mask.push(real);
                position_index.push(real.then_some(pos));
                match slot {
                    SlotKind::Formula(k) if real => {
                        token_index.push(None);
                        formula_rows.extend(input.formula.row(*k).iter().map(|&x| T::from_f64_lossy(x)));
                        formula_targets.push(b * l + pos);
                    }
                    _ if real => {
                        if id >= self.config.vocab_size {
                            return Err(crate::tensor::TensorError::Index {
                                index: id,
                                len: self.config.vocab_size,
                            }
                            .into());
                        }
                        token_index.push(Some(id));
                    }
                    _ => token_index.push(None),
                }
            }
        }
        let table = g.param(&self.store, self.token_table);
        let mut x = g.gather(table, token_index)?;
        if !formula_targets.is_empty() {
            let rows = g.input(Tensor::from_vec(&[formula_targets.len(), FORMULA_ROW_DIM], formula_rows)?);
            let projected = self.linear(g, rows, self.formula_projection)?;
            let placed = g.scatter(projected, formula_targets, inputs.len() * l)?;
            x = g.add(x, placed)?;
        }
        let pos_table = g.param(&self.store, self.positions);
        let pos = g.gather(pos_table, position_index)?;
        x = g.add(x, pos)?;
        Ok((x, l, mask))
    }

    /// Multi-head self-attention sublayer: projections, per-head attention on
    /// `d_model / n_heads` slices, output projection. Returns the projected
    /// output and the raw attention node.
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        layer: usize,
        x: Var,
        batch: usize,
        seq_len: usize,
        key_mask: &[bool],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var), EncoderError> {
        let p = &self.layers[layer];
        let q = self.linear(g, x, p.query)?;
        let k = self.linear(g, x, p.key)?;
        let v = self.linear(g, x, p.value)?;
        let drop = match mode {
            Mode::Train if self.config.attention_dropout > 0.0 => Some((self.config.attention_dropout, rng)),
            _ => None,
        };
        let att = g.attention(q, k, v, self.config.n_heads, batch, seq_len, key_mask, drop)?;
        let out = self.linear(g, att, p.output)?;
        Ok((out, att))
    }

    fn forward_impl<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &[ModelInput],
        mode: Mode,
        rng: &mut R,
        record: bool,
    ) -> Result<ForwardOutput, EncoderError> {
        let (mut x, l, mask) = self.embed_batch(g, inputs)?;
        let batch = inputs.len();
        let hidden_p = if mode == Mode::Train { self.config.hidden_dropout } else { 0.0 };
        x = g.dropout(x, hidden_p, rng);
        let mut attention = Vec::with_capacity(self.config.n_layers);
        for (i, p) in self.layers.iter().enumerate() {
            let (a, att) = self.multi_head_attention(g, i, x, batch, l, &mask, mode, rng)?;
            attention.push(att);
            let a = g.dropout(a, hidden_p, rng);
            let r = g.add(x, a)?;
            x = self.norm(g, r, p.attention_norm)?;
            let f = self.linear(g, x, p.ffn_inner)?;
            let f = g.gelu(f);
            let f = self.linear(g, f, p.ffn_outer)?;
            let f = g.dropout(f, hidden_p, rng);
            let r = g.add(x, f)?;
            x = self.norm(g, r, p.ffn_norm)?;
        }
        let cls = g.select_rows(x, (0..batch).map(|b| b * l).collect())?;
        Ok(ForwardOutput {
            hidden: x,
            cls,
            batch,
            seq_len: l,
            attention: record.then_some(attention),
        })
    }

    /// Encodes a batch of equal-length inputs. Dropout is active only in train mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &[ModelInput],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput, EncoderError> {
        self.forward_impl(g, inputs, mode, rng, false)
    }

    /// As [`forward`](Self::forward), additionally exposing attention maps.
    pub fn forward_recording<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &[ModelInput],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput, EncoderError> {
        self.forward_impl(g, inputs, mode, rng, true)
    }

    /// Regression head on pooled rows: linear, SiLU, dropout, linear.
    pub fn head<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        head: &HeadParams,
        pooled: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, EncoderError> {
        let h = self.linear(g, pooled, head.hidden)?;
        let h = g.silu(h);
        let p = if mode == Mode::Train { self.config.head_dropout } else { 0.0 };
        let h = g.dropout(h, p, rng);
        self.linear(g, h, head.output)
    }

    /// Vocabulary logits for the selected rows of `hidden`.
    pub fn mlm_logits(&self, g: &mut Graph<T>, hidden: Var, rows: Vec<usize>) -> Result<Var, EncoderError> {
        let h = g.select_rows(hidden, rows)?;
        let h = self.linear(g, h, self.mlm.dense)?;
        let h = g.gelu(h);
        let h = self.norm(g, h, self.mlm.norm)?;
        let table = g.param(&self.store, self.token_table);
        let logits = g.matmul(h, table, true)?;
        let bias = g.param(&self.store, self.mlm.output_bias);
        Ok(g.add_row(logits, bias)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{
        build_vocabulary, embed_formula, tokenize_crystal, BinSpec, ElementEmbeddingTable, InfoLayout,
        InformaticsFields, TokenVocabulary,
    };
    use crate::grammar::parse_formula;

    fn vocab() -> TokenVocabulary {
        build_vocabulary(InfoLayout::none(), BinSpec::default(), &[])
    }

    fn input(v: &TokenVocabulary, sg: i64, formula: &str) -> ModelInput {
        let comp = parse_formula(formula).unwrap();
        let table = ElementEmbeddingTable::synthetic(9);
        ModelInput {
            seq: tokenize_crystal(sg, &comp, &InformaticsFields::default(), v).unwrap(),
            formula: embed_formula(&comp, &table).unwrap(),
            record_id: None,
        }
    }

    fn small(v: &TokenVocabulary, layers: usize) -> EncoderConfig {
        let mut c = EncoderConfig::desk(v.len(), 33);
        c.n_layers = layers;
        c.d_model = 16;
        c.d_ff = 64;
        c
    }

    /// Closed form: embeddings + per-layer (4 projections, 2 norms, 2 FFN maps) + heads.
    fn closed_form(c: &EncoderConfig) -> usize {
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let embeddings = v * d + c.max_len * d + 201 * d + d;
        let layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
        let mlm = d * d + d + 2 * d + v;
        let lpp = d * d + d + 6 * d + 6;
        let finetune = d * d + d + d + 1;
        embeddings + c.n_layers * layer + mlm + lpp + finetune
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let v = vocab();
        let full = EncoderConfig::full(v.len(), 38);
        let from_shapes: usize = parameter_shapes(&full).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(from_shapes, closed_form(&full));
        // 8 blocks of width 768 carry 8 * 7,087,872 weights
        assert_eq!(
            closed_form(&full) - closed_form(&EncoderConfig { n_layers: 0, ..full.clone() }),
            8 * 7_087_872
        );
        let desk = EncoderConfig::desk(v.len(), 33);
        let state = EncoderState::<f32>::new(desk.clone(), 0).unwrap();
        assert_eq!(state.parameter_count(), closed_form(&desk));
    }

    #[test]
    fn names_are_canonical_and_unique() {
        let v = vocab();
        let s = EncoderState::<f64>::new(small(&v, 2), 0).unwrap();
        let names: Vec<&str> = s.store().ids().map(|id| s.store().name(id)).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&"layers.1.attention.query.weight"));
        assert!(is_decay_exempt("layers.0.ffn_norm.gain"));
        assert!(is_decay_exempt("heads.mlm.output_bias"));
        assert!(!is_decay_exempt("layers.0.ffn.inner.weight"));
        let gains = s.store().value(s.layers[0].attention_norm.0);
        assert!(gains.data().iter().all(|&x| x == 1.0));
        let w = s.store().value(s.layers[0].query.0);
        assert!(w.data().iter().all(|x| x.abs() <= 0.04));
    }

    #[test]
    fn eval_is_deterministic_and_train_without_dropout_matches() {
        let v = vocab();
        let inputs = vec![input(&v, 225, "NaCl"), input(&v, 12, "CaTiO3")];
        let s = EncoderState::<f64>::new(small(&v, 2), 1).unwrap();
        let run = |state: &EncoderState<f64>, mode| {
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let out = state.forward(&mut g, &inputs, mode, &mut rng).unwrap();
            g.value(out.hidden).clone()
        };
        assert_eq!(run(&s, Mode::Eval), run(&s, Mode::Eval));
        assert_ne!(run(&s, Mode::Train), run(&s, Mode::Eval));
        let quiet = EncoderState::from_store(small(&v, 2).without_dropout(), s.store().clone()).unwrap();
        assert_eq!(run(&quiet, Mode::Train), run(&quiet, Mode::Eval));
    }

    #[test]
    fn zero_layers_pass_the_cls_row_through() {
        let v = vocab();
        let inp = input(&v, 62, "Fe2O3");
        let s = EncoderState::<f64>::new(small(&v, 0), 2).unwrap();
        let mut g = Graph::new();
        let out = s.forward(&mut g, std::slice::from_ref(&inp), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let embedded = s.embed(&inp).unwrap();
        assert_eq!(g.value(out.cls).data(), embedded.matrix.row(0));
        let hidden = g.value(out.hidden);
        for r in 0..33 {
            for (a, b) in hidden.row(r).iter().zip(embedded.matrix.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batching_does_not_change_results() {
        let v = vocab();
        let a = input(&v, 225, "NaCl");
        let b = input(&v, 194, "MgB2");
        let s = EncoderState::<f64>::new(small(&v, 2), 3).unwrap();
        let cls = |inputs: &[ModelInput]| {
            let mut g = Graph::new();
            let out = s.forward(&mut g, inputs, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            g.value(out.cls).clone()
        };
        let both = cls(&[a.clone(), b.clone()]);
        let single = cls(&[b]);
        for (x, y) in both.row(1).iter().zip(single.row(0)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn length_and_batch_errors() {
        let v = vocab();
        let mut c = small(&v, 1);
        c.max_len = 20;
        let s = EncoderState::<f64>::new(c, 0).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            s.forward(&mut g, &[input(&v, 1, "Si")], Mode::Eval, &mut rng),
            Err(EncoderError::LengthOverflow { len: 33, max: 20 })
        ));
        assert!(matches!(s.forward(&mut g, &[], Mode::Eval, &mut rng), Err(EncoderError::EmptyBatch)));
        let s = EncoderState::<f64>::new(small(&v, 1), 0).unwrap();
        let out = s.forward(&mut g, &[input(&v, 1, "Si")], Mode::Eval, &mut rng).unwrap();
        assert!(matches!(out.attention_maps(&g, 4), Err(EncoderError::RecordingDisabled)));
    }

    #[test]
    fn single_head_reduces_to_plain_attention() {
        let v = vocab();
        let mut c = small(&v, 1).without_dropout();
        c.n_heads = 1;
        let s = EncoderState::<f64>::new(c, 4).unwrap();
        let inp = input(&v, 139, "Al3Ti");
        let x = s.embed(&inp).unwrap().matrix;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = s
            .multi_head_attention(&mut g, 0, xv, 1, 33, &inp.seq.attention_mask, Mode::Eval, &mut rng)
            .unwrap();
        let st = s.store();
        let p = &s.layers[0];
        let proj = |t: &Tensor<f64>, (w, b): (ParamId, ParamId)| {
            let mut y = t.matmul(st.value(w), false).unwrap();
            for r in 0..y.rows() {
                for (o, bb) in y.row_mut(r).iter_mut().zip(st.value(b).data()) {
                    *o += bb;
                }
            }
            y
        };
        let (att, _) = super::super::scaled_dot_attention(
            &proj(&x, p.query),
            &proj(&x, p.key),
            &proj(&x, p.value),
            &inp.seq.attention_mask,
        )
        .unwrap();
        let expect = proj(&att, p.output);
        assert!(g.value(out).max_abs_diff(&expect) < 1e-12);
        assert_eq!(g.value(out).shape(), x.shape());
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        // 4 tokens, width 8: perturb every query/key/value/output weight.
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rand = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
        };
        let x = rand(&[4, 8]);
        let ids: Vec<(ParamId, ParamId)> = ["q", "k", "v", "o"]
            .iter()
            .map(|n| (store.add(format!("{n}.w"), rand(&[8, 8])), store.add(format!("{n}.b"), rand(&[8]))))
            .collect();
        let mask = [true, true, true, false];
        let loss = |s: &ParamStore<f64>, backward: bool| -> (f64, Option<ParamStore<f64>>) {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let lin = |g: &mut Graph<f64>, x: Var, (w, b): (ParamId, ParamId)| {
                let (w, b) = (g.param(s, w), g.param(s, b));
                g.linear(x, w, b).unwrap()
            };
            let q = lin(&mut g, xv, ids[0]);
            let k = lin(&mut g, xv, ids[1]);
            let v = lin(&mut g, xv, ids[2]);
            let a = g.attention::<ChaCha8Rng>(q, k, v, 2, 1, 4, &mask, None).unwrap();
            let o = lin(&mut g, a, ids[3]);
            let l = g.mse(o, &[0.25; 32]).unwrap();
            if backward {
                let mut s2 = s.clone();
                g.backward(l, &mut s2).unwrap();
                (0.0, Some(s2))
            } else {
                (g.value(l).data()[0], None)
            }
        };
        let grads = loss(&store, true).1.unwrap();
        let eps = 1e-5;
        for id in store.ids() {
            for i in 0..store.value(id).len() {
                let mut s = store.clone();
                s.value_mut(id).data_mut()[i] += eps;
                let up = loss(&s, false).0;
                s.value_mut(id).data_mut()[i] -= 2.0 * eps;
                let down = loss(&s, false).0;
                let num = (up - down) / (2.0 * eps);
                let ana = grads.grad(id).data()[i];
                assert!((num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()).max(1e-6), "{} {i}", store.name(id));
            }
        }
    }
}
