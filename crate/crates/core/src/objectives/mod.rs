//! Pretraining objectives (masked tokens, lattice parameters, both) and the
//! finetuning regression loss.

mod scaler;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{TokenSequence, MASK_ID, SG_TOKENS};
use crate::encoder::{EncoderError, EncoderState, Mode, ModelInput, LPP_OUTPUTS};
use crate::tensor::{Float, Graph, TensorError, Var};

pub use scaler::TargetScaler;

pub const DEFAULT_MASK_RATIO: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("masking ratio {0} must lie in (0, 1]")]
    Ratio(f64),
    #[error("no positions are masked")]
    EmptyPlan,
    #[error("batch has no lattice targets")]
    MissingTargets,
    #[error("target column {column} has non-finite values")]
    DegenerateTarget { column: usize },
    #[error("scaler expects {expected} values, got {found}")]
    ScalerWidth { expected: usize, found: usize },
    #[error("{0} targets given for a batch of {1}")]
    TargetCount(usize, usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<ObjectiveError> for EncoderError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::Encoder(e) => e,
            ObjectiveError::Tensor(e) => EncoderError::Tensor(e),
            other => EncoderError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "mlm")]
    Mlm,
    #[serde(rename = "lpp")]
    Lpp,
    #[serde(rename = "mlm+lpp")]
    MlmLpp,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Lpp => "lpp",
            Objective::MlmLpp => "mlm+lpp",
        }
    }

    pub fn uses_masking(self) -> bool {
        matches!(self, Objective::Mlm | Objective::MlmLpp)
    }

    pub fn uses_lattice(self) -> bool {
        matches!(self, Objective::Lpp | Objective::MlmLpp)
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlm" => Ok(Objective::Mlm),
            "lpp" => Ok(Objective::Lpp),
            "mlm+lpp" | "mlm-lpp" | "combined" => Ok(Objective::MlmLpp),
            _ => Err(format!("unknown objective `{s}` (mlm, lpp, mlm+lpp)")),
        }
    }
}

/// Masked positions of one sequence with the ids they replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingPlan {
    /// Sequence positions in 1..=12, ascending.
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
    pub ratio: f64,
}

/// Number of masked space-group positions for a ratio.
pub fn masked_count(ratio: f64) -> usize {
    (ratio * SG_TOKENS as f64).round() as usize
}

/// Replaces `round(ratio * 12)` distinct space-group positions, drawn
/// uniformly, with `[MASK]`.
pub fn apply_masking<R: Rng + ?Sized>(
    seq: &TokenSequence,
    ratio: f64,
    rng: &mut R,
) -> Result<(TokenSequence, MaskingPlan), ObjectiveError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ObjectiveError::Ratio(ratio));
    }
    if seq.len() < 1 + SG_TOKENS {
        return Err(ObjectiveError::EmptyPlan);
    }
    let mut positions: Vec<usize> = sample(rng, SG_TOKENS, masked_count(ratio))
        .into_iter()
        .map(|i| i + 1)
        .collect();
    positions.sort_unstable();
    let mut masked = seq.clone();
    let labels = positions
        .iter()
        .map(|&p| std::mem::replace(&mut masked.ids[p], MASK_ID))
        .collect();
    Ok((
        masked,
        MaskingPlan {
            positions,
            labels,
            ratio,
        },
    ))
}

/// Mean cross-entropy over the rows of `logits`, one per masked position.
pub fn mlm_loss<T: Float>(g: &mut Graph<T>, logits: Var, plans: &[MaskingPlan]) -> Result<Var, ObjectiveError> {
    let labels: Vec<usize> = plans.iter().flat_map(|p| p.labels.iter().copied()).collect();
    if labels.is_empty() {
        return Err(ObjectiveError::EmptyPlan);
    }
    Ok(g.cross_entropy(logits, labels)?)
}

/// Rows of the flattened `(batch * seq_len)` hidden matrix that were masked.
pub fn masked_rows(plans: &[MaskingPlan], seq_len: usize) -> Vec<usize> {
    plans
        .iter()
        .enumerate()
        .flat_map(|(b, p)| p.positions.iter().map(move |&pos| b * seq_len + pos))
        .collect()
}

/// Six standardized lattice outputs per pooled row.
pub fn lpp_head<T: Float, R: Rng + ?Sized>(
    state: &EncoderState<T>,
    g: &mut Graph<T>,
    cls: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    Ok(state.head(g, &state.lpp, cls, mode, rng)?)
}

/// Mean squared standardized residual.
pub fn lpp_loss<T: Float>(g: &mut Graph<T>, pred: Var, standardized: &[[f64; LPP_OUTPUTS]]) -> Result<Var, ObjectiveError> {
    if standardized.is_empty() {
        return Err(ObjectiveError::MissingTargets);
    }
    let flat: Vec<T> = standardized.iter().flatten().map(|&x| T::from_f64_lossy(x)).collect();
    Ok(g.mse(pred, &flat)?)
}

/// One regression output per pooled row.
pub fn finetune_head<T: Float, R: Rng + ?Sized>(
    state: &EncoderState<T>,
    g: &mut Graph<T>,
    cls: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    Ok(state.head(g, &state.finetune, cls, mode, rng)?)
}

/// Mean absolute error against standardized targets.
pub fn finetune_loss<T: Float>(g: &mut Graph<T>, pred: Var, standardized: &[f64]) -> Result<Var, ObjectiveError> {
    if standardized.is_empty() {
        return Err(ObjectiveError::MissingTargets);
    }
    let t: Vec<T> = standardized.iter().map(|&x| T::from_f64_lossy(x)).collect();
    Ok(g.mae(pred, &t)?)
}

/// Loss nodes and masking bookkeeping of one pretraining step.
#[derive(Debug, Clone)]
pub struct PretrainTerms {
    pub total: Var,
    pub mlm: Option<Var>,
    pub lpp: Option<Var>,
    /// Logit rows for the masked positions, in plan order.
    pub logits: Option<Var>,
    pub plans: Vec<MaskingPlan>,
}

/// Builds the pretraining loss on a single forward pass.
///
/// Masking (when the objective uses it and `ratio` yields at least one
/// position) is applied before the forward pass, so the lattice head sees the
/// masked inputs. The total is `lpp + lambda * mlm`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_objective<T: Float, R: Rng + ?Sized>(
    state: &EncoderState<T>,
    g: &mut Graph<T>,
    objective: Objective,
    inputs: &[ModelInput],
    lattice: Option<&[[f64; LPP_OUTPUTS]]>,
    ratio: f64,
    lambda: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<PretrainTerms, ObjectiveError> {
    let masking = objective.uses_masking() && masked_count(ratio) > 0;
    if objective == Objective::Mlm && !masking {
        return Err(if ratio > 0.0 { ObjectiveError::EmptyPlan } else { ObjectiveError::Ratio(ratio) });
    }
    let lattice = if objective.uses_lattice() {
        let l = lattice.ok_or(ObjectiveError::MissingTargets)?;
        if l.len() != inputs.len() {
            return Err(ObjectiveError::TargetCount(l.len(), inputs.len()));
        }
        Some(l)
    } else {
        None
    };
    let mut plans = Vec::new();
    let masked_inputs;
    let inputs = if masking {
        let mut v = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let (seq, plan) = apply_masking(&inp.seq, ratio, rng)?;
            plans.push(plan);
            v.push(ModelInput {
                seq,
                formula: inp.formula.clone(),
                record_id: inp.record_id.clone(),
            });
        }
        masked_inputs = v;
        &masked_inputs[..]
    } else {
        inputs
    };
    let out = state.forward(g, inputs, mode, rng)?;
    let (mlm, logits) = if masking {
        let logits = state.mlm_logits(g, out.hidden, masked_rows(&plans, out.seq_len))?;
        (Some(mlm_loss(g, logits, &plans)?), Some(logits))
    } else {
        (None, None)
    };
    let lpp = match lattice {
        Some(targets) => {
            let pred = lpp_head(state, g, out.cls, mode, rng)?;
            Some(lpp_loss(g, pred, targets)?)
        }
        None => None,
    };
    let total = match (lpp, mlm) {
        (Some(l), Some(m)) => {
            let scaled = g.scale(m, T::from_f64_lossy(lambda));
            g.add(l, scaled)?
        }
        (Some(l), None) => l,
        (None, Some(m)) => m,
        (None, None) => return Err(ObjectiveError::MissingTargets),
    };
    Ok(PretrainTerms {
        total,
        mlm,
        lpp,
        logits,
        plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{
        build_vocabulary, embed_formula, tokenize_crystal, BinSpec, ElementEmbeddingTable, InfoLayout,
        InformaticsFields, TokenVocabulary, CLS_ID,
    };
    use crate::encoder::EncoderConfig;
    use crate::grammar::parse_formula;
    use crate::tensor::{ParamStore, Tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> TokenVocabulary {
        build_vocabulary(InfoLayout::mof(), BinSpec::default(), &[])
    }

    fn input(v: &TokenVocabulary, sg: i64, f: &str) -> ModelInput {
        let comp = parse_formula(f).unwrap();
        let info = InformaticsFields {
            unit_cell_volume: Some(500.0),
            porosity_fraction: Some(40.0),
            ..Default::default()
        };
        ModelInput {
            seq: tokenize_crystal(sg, &comp, &info, v).unwrap(),
            formula: embed_formula(&comp, &ElementEmbeddingTable::synthetic(0)).unwrap(),
            record_id: None,
        }
    }

    #[test]
    fn masking_counts() {
        let v = vocab();
        let seq = input(&v, 225, "NaCl").seq;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (m, plan) = apply_masking(&seq, 0.25, &mut rng).unwrap();
        assert_eq!(plan.positions.len(), 3);
        assert_eq!(m.ids.iter().filter(|&&i| i == MASK_ID).count(), 3);
        for (p, l) in plan.positions.iter().zip(&plan.labels) {
            assert_eq!(seq.ids[*p], *l);
        }
        let (_, all) = apply_masking(&seq, 1.0, &mut rng).unwrap();
        assert_eq!(all.positions, (1..=12).collect::<Vec<_>>());
        let a = apply_masking(&seq, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = apply_masking(&seq, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(apply_masking(&seq, 0.0, &mut rng).is_err());
        assert!(apply_masking(&seq, 1.5, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn masking_touches_only_space_group_positions(seed in any::<u64>(), ratio in 0.05f64..=1.0, sg in 1i64..=230) {
            let v = vocab();
            let seq = input(&v, sg, "Fe2O3").seq;
            let (m, plan) = apply_masking(&seq, ratio, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(m.ids[0], CLS_ID);
            prop_assert_eq!(&m.ids[13..], &seq.ids[13..]);
            prop_assert!(plan.positions.iter().all(|&p| (1..=12).contains(&p)));
            prop_assert_eq!(plan.positions.len(), masked_count(ratio));
            prop_assert_eq!(m.attention_mask, seq.attention_mask);
        }
    }

    fn scalar_graph_loss(f: impl FnOnce(&mut Graph<f64>) -> Var) -> f64 {
        let mut g = Graph::new();
        let l = f(&mut g);
        g.value(l).data()[0]
    }

    #[test]
    fn cross_entropy_cases() {
        let plan = |labels: Vec<usize>| MaskingPlan {
            positions: (1..=labels.len()).collect(),
            labels,
            ratio: 0.25,
        };
        let onehot = scalar_graph_loss(|g| {
            let x = g.input(Tensor::from_vec(&[2, 3], vec![60.0, 0.0, 0.0, 0.0, 0.0, 60.0]).unwrap());
            mlm_loss(g, x, &[plan(vec![0, 2])]).unwrap()
        });
        assert!(onehot < 1e-20);
        let uniform = scalar_graph_loss(|g| {
            let x = g.input(Tensor::filled(&[3, 7], 0.4));
            mlm_loss(g, x, &[plan(vec![1, 2, 6])]).unwrap()
        });
        assert!((uniform - 7f64.ln()).abs() < 1e-14);
        // Independent scalar oracle, |V| = 4, two rows.
        let rows: [[f64; 4]; 2] = [[1.0, 2.0, 0.5, -1.0], [0.0, -0.3, 2.2, 0.7]];
        let labels = [1usize, 3];
        let oracle: f64 = rows
            .iter()
            .zip(labels)
            .map(|(r, t)| -(r[t].exp() / r.iter().map(|x| x.exp()).sum::<f64>()).ln())
            .sum::<f64>()
            / 2.0;
        let got = scalar_graph_loss(|g| {
            let x = g.input(Tensor::from_vec(&[2, 4], rows.concat()).unwrap());
            mlm_loss(g, x, &[plan(labels.to_vec())]).unwrap()
        });
        assert!((got - oracle).abs() < 1e-14);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(&[1, 4], 0.0));
        assert!(matches!(mlm_loss(&mut g, x, &[]), Err(ObjectiveError::EmptyPlan)));
    }

    #[test]
    fn regression_losses() {
        let t = [[0.1, -0.2, 0.3, 1.0, 0.0, -1.0], [2.0, 1.0, 0.0, 0.5, 0.5, 0.5]];
        let exact = scalar_graph_loss(|g| {
            let p = g.input(Tensor::from_vec(&[2, 6], t.concat()).unwrap());
            lpp_loss(g, p, &t).unwrap()
        });
        assert_eq!(exact, 0.0);
        let off = scalar_graph_loss(|g| {
            let p = g.input(Tensor::from_vec(&[2, 6], t.concat().iter().map(|x| x + 1.0).collect()).unwrap());
            lpp_loss(g, p, &t).unwrap()
        });
        assert!((off - 1.0).abs() < 1e-15);
        let pred = [0.3, -1.2, 0.8, 2.0, 0.0, 0.1];
        let oracle = pred.iter().zip(&t[0]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 6.0;
        let got = scalar_graph_loss(|g| {
            let p = g.input(Tensor::from_vec(&[1, 6], pred.to_vec()).unwrap());
            lpp_loss(g, p, &t[..1]).unwrap()
        });
        assert!((got - oracle).abs() < 1e-15);
        let mae = scalar_graph_loss(|g| {
            let p = g.input(Tensor::from_vec(&[3, 1], vec![0.0; 3]).unwrap());
            finetune_loss(g, p, &[0.0, 0.0, 10.0]).unwrap()
        });
        assert!((mae - 10.0 / 3.0).abs() < 1e-15);
    }

    fn small_state(v: &TokenVocabulary) -> EncoderState<f64> {
        let mut c = EncoderConfig::desk(v.len(), v.layout().sequence_len());
        c.d_model = 16;
        c.d_ff = 32;
        EncoderState::new(c, 3).unwrap()
    }

    #[test]
    fn zero_head_outputs_zero() {
        let v = vocab();
        let mut s = small_state(&v);
        for (w, b) in [s.lpp.hidden, s.lpp.output] {
            s.store_mut().value_mut(w).data_mut().fill(0.0);
            s.store_mut().value_mut(b).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = s.forward(&mut g, &[input(&v, 1, "Si"), input(&v, 2, "C")], Mode::Eval, &mut rng).unwrap();
        let p = lpp_head(&s, &mut g, out.cls, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 6]);
        assert!(g.value(p).data().iter().all(|&x| x == 0.0));
        let f = finetune_head(&s, &mut g, out.cls, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(f).shape(), &[2, 1]);
    }

    fn head_grad_check(which: &str) {
        let v = vocab();
        let s = small_state(&v);
        let inputs = [input(&v, 12, "CaTiO3"), input(&v, 194, "MgB2")];
        let head = if which == "lpp" { s.lpp.clone() } else { s.finetune.clone() };
        let eval = |st: &ParamStore<f64>, backward: bool| -> (f64, Option<ParamStore<f64>>) {
            let s2 = EncoderState::from_store(s.config().clone(), st.clone()).unwrap();
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let out = s2.forward(&mut g, &inputs, Mode::Train, &mut rng).unwrap();
            let loss = if which == "lpp" {
                let p = lpp_head(&s2, &mut g, out.cls, Mode::Train, &mut rng).unwrap();
                lpp_loss(&mut g, p, &[[0.5; 6], [-0.5; 6]]).unwrap()
            } else {
                let p = finetune_head(&s2, &mut g, out.cls, Mode::Train, &mut rng).unwrap();
                let sq = g.mse(p, &[0.7, -0.4]).unwrap();
                sq
            };
            if backward {
                let mut st2 = st.clone();
                g.backward(loss, &mut st2).unwrap();
                (0.0, Some(st2))
            } else {
                (g.value(loss).data()[0], None)
            }
        };
        let grads = eval(s.store(), true).1.unwrap();
        for id in [head.hidden.0, head.hidden.1, head.output.0, head.output.1] {
            for i in (0..s.store().value(id).len()).step_by(7) {
                let mut st = s.store().clone();
                st.value_mut(id).data_mut()[i] += 1e-5;
                let up = eval(&st, false).0;
                st.value_mut(id).data_mut()[i] -= 2e-5;
                let down = eval(&st, false).0;
                let num = (up - down) / 2e-5;
                let ana = grads.grad(id).data()[i];
                assert!((num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()).max(1e-6), "{which} {i}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn lpp_head_gradients() {
        head_grad_check("lpp");
    }

    #[test]
    fn finetune_head_gradients() {
        head_grad_check("finetune");
    }

    #[test]
    fn combined_equals_sum_of_terms_on_one_forward() {
        let v = vocab();
        let s = small_state(&v);
        let inputs = [input(&v, 225, "NaCl"), input(&v, 62, "CaTiO3"), input(&v, 1, "Si")];
        let lat = [[0.1; 6], [-0.3; 6], [1.0; 6]];
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = pretrain_objective(&s, &mut g, Objective::MlmLpp, &inputs, Some(&lat), 0.25, 1.0, Mode::Eval, &mut rng).unwrap();
        let total = g.value(t.total).data()[0];
        let parts = g.value(t.mlm.unwrap()).data()[0] + g.value(t.lpp.unwrap()).data()[0];
        assert!((total - parts).abs() < 1e-14);
        assert_eq!(t.plans.len(), 3);

        // lambda 0 leaves only the lattice term, still on masked inputs
        let mut g = Graph::new();
        let t0 = pretrain_objective(&s, &mut g, Objective::MlmLpp, &inputs, Some(&lat), 0.25, 0.0, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(g.value(t0.total).data()[0], g.value(t0.lpp.unwrap()).data()[0]);

        // no masking and lambda 0 is plain LPP
        let mut g = Graph::new();
        let none = pretrain_objective(&s, &mut g, Objective::MlmLpp, &inputs, Some(&lat), 0.0, 0.0, Mode::Eval, &mut rng).unwrap();
        let mut g2 = Graph::new();
        let plain = pretrain_objective(&s, &mut g2, Objective::Lpp, &inputs, Some(&lat), 0.25, 1.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(none.total).data(), g2.value(plain.total).data());
        assert!(none.plans.is_empty());

        let mut g = Graph::new();
        assert!(matches!(
            pretrain_objective(&s, &mut g, Objective::Lpp, &inputs, None, 0.25, 1.0, Mode::Eval, &mut rng),
            Err(ObjectiveError::MissingTargets)
        ));
    }

    #[test]
    fn combined_gradient_is_sum_of_component_gradients() {
        let v = vocab();
        let s = small_state(&v);
        let inputs = [input(&v, 225, "NaCl"), input(&v, 166, "Bi2Te3")];
        let lat = [[0.2; 6], [-0.1; 6]];
        let grads = |objective: Objective, lambda: f64| {
            let mut st = s.store().clone();
            st.zero_grads();
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let t = pretrain_objective(&s, &mut g, objective, &inputs, Some(&lat), 0.25, lambda, Mode::Eval, &mut rng).unwrap();
            let loss = match objective {
                Objective::Mlm => t.mlm.unwrap(),
                _ => t.total,
            };
            g.backward(loss, &mut st).unwrap();
            st
        };
        let both = grads(Objective::MlmLpp, 1.0);
        let lpp_only = grads(Objective::MlmLpp, 0.0);
        let mlm_only = grads(Objective::Mlm, 1.0);
        for id in both.ids() {
            for ((a, b), c) in both.grad(id).data().iter().zip(lpp_only.grad(id).data()).zip(mlm_only.grad(id).data()) {
                assert!((a - (b + c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_names() {
        for o in [Objective::Mlm, Objective::Lpp, Objective::MlmLpp] {
            assert_eq!(o.name().parse::<Objective>(), Ok(o));
        }
        assert!("nsp".parse::<Objective>().is_err());
    }
}
