use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWSettings, ElementSet, EpochMetrics, Flow, ModelBundle, ScheduleSpec, TrainConfig, TrainingError};
use crate::data::{split, CrystalRecord, Partition, SplitSpec};
use crate::embedding::{build_vocabulary, BinSpec, InfoField, InfoLayout, TokenVocabulary, MASK_ID, SG_TOKENS};
use crate::encoder::{AttentionMap, EncoderState, Mode, ModelInput, LPP_OUTPUTS};
use crate::objectives::{finetune_head, finetune_loss, masked_count, pretrain_objective, MaskingPlan, TargetScaler};
use crate::tensor::{Graph, ParamStore};

const SHUFFLE_STREAM: u64 = 1 << 62;

/// Generator for one optimizer step (or one epoch's shuffle), independent of
/// everything drawn before it.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, SHUFFLE_STREAM + epoch as u64));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn gather(inputs: &[ModelInput], idx: &[usize]) -> Vec<ModelInput> {
    idx.iter().map(|&i| inputs[i].clone()).collect()
}

/// Vocabulary over the knowledge base, the bins and the string-valued
/// informatics fields seen in `records`. Volume bins are fitted on the
/// records' volumes when the layout carries volumes.
pub fn corpus_vocabulary(records: &[CrystalRecord], layout: InfoLayout) -> TokenVocabulary {
    let bins = if layout.contains(InfoField::Volume) {
        BinSpec::fit_volumes(records.iter().filter_map(|r| r.informatics.unit_cell_volume))
    } else {
        BinSpec::default()
    };
    build_vocabulary(layout, bins, records.iter().map(|r| &r.informatics))
}

fn schedule(cfg: &TrainConfig, n: usize) -> Result<ScheduleSpec, TrainingError> {
    let per_epoch = n.div_ceil(cfg.batch_size) as u64;
    ScheduleSpec::new(per_epoch * cfg.epochs as u64, cfg.warmup_fraction, cfg.lr)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Builds the vocabulary (and lattice scaler when needed) from `records`,
/// initializes a model and pretrains it.
pub fn pretrain(
    records: &[CrystalRecord],
    cfg: &TrainConfig,
    elements: ElementSet,
    observer: &mut dyn FnMut(&EpochMetrics) -> Flow,
) -> Result<PretrainOutcome, TrainingError> {
    cfg.validate()?;
    let vocab = corpus_vocabulary(records, cfg.info_layout()?);
    let mut bundle = ModelBundle::new(vocab, elements, cfg)?;
    let (metrics, steps) = pretrain_bundle(&mut bundle, records, cfg, observer)?;
    Ok(PretrainOutcome { bundle, metrics, steps })
}

/// Continues pretraining an existing model on `records`.
pub fn pretrain_bundle(
    bundle: &mut ModelBundle,
    records: &[CrystalRecord],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochMetrics) -> Flow,
) -> Result<(Vec<EpochMetrics>, u64), TrainingError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(TrainingError::EmptySplit("pretraining corpus"));
    }
    if &cfg.info_layout()? != bundle.vocab.layout() {
        return Err(TrainingError::Mismatch(format!(
            "corpus layout `{}` differs from the vocabulary layout `{}`",
            cfg.layout,
            bundle.vocab.layout().to_text()
        )));
    }
    if cfg.objective.uses_masking() && masked_count(cfg.mask_ratio) == 0 && !cfg.objective.uses_lattice() {
        return Err(TrainingError::Config(format!("mask_ratio {} masks no token", cfg.mask_ratio)));
    }
    let inputs = bundle.inputs(records)?;
    let lattice = if cfg.objective.uses_lattice() {
        let raw: Vec<[f64; 6]> = records
            .iter()
            .map(|r| r.require_lattice().map(|l| l.to_array()))
            .collect::<Result<_, _>>()?;
        let scaler = match &bundle.lattice_scaler {
            Some(s) => s.clone(),
            None => TargetScaler::fit_lattice(&raw)?,
        };
        let z = raw.iter().map(|r| scaler.transform_lattice(r)).collect::<Result<Vec<_>, _>>()?;
        bundle.lattice_scaler = Some(scaler);
        Some(z)
    } else {
        None
    };
    bundle.config = cfg.clone();
    bundle.stage = "pretrained".into();
    let sched = schedule(cfg, inputs.len())?;
    let mut opt = AdamW::new(bundle.state.store(), AdamWSettings { weight_decay: cfg.weight_decay, ..Default::default() });
    let mut metrics = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let (mut loss, mut mlm, mut lpp) = (0.0, 0.0, 0.0);
        let (mut correct, mut masked) = (0usize, 0usize);
        let mut lr = 0.0;
        for idx in epoch_batches(inputs.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = gather(&inputs, &idx);
            let targets: Option<Vec<[f64; LPP_OUTPUTS]>> = lattice.as_ref().map(|z| idx.iter().map(|&i| z[i]).collect());
            let mut rng = stream_rng(cfg.seed, step);
            let mut g = Graph::<f32>::new();
            let terms = pretrain_objective(
                &bundle.state,
                &mut g,
                cfg.objective,
                &batch,
                targets.as_deref(),
                cfg.mask_ratio,
                cfg.lambda,
                Mode::Train,
                &mut rng,
            )?;
            let w = idx.len() as f64;
            loss += w * f64::from(g.value(terms.total).data()[0]);
            if let Some(m) = terms.mlm {
                mlm += w * f64::from(g.value(m).data()[0]);
            }
            if let Some(l) = terms.lpp {
                lpp += w * f64::from(g.value(l).data()[0]);
            }
            if let Some(logits) = terms.logits {
                let t = g.value(logits);
                let labels = terms.plans.iter().flat_map(|p| p.labels.iter().copied());
                for (r, label) in labels.enumerate() {
                    correct += usize::from(argmax(t.row(r)) == label);
                    masked += 1;
                }
            }
            g.backward(terms.total, bundle.state.store_mut())?;
            lr = sched.lr_at(step)?;
            opt.step(bundle.state.store_mut(), lr)?;
            step += 1;
        }
        let n = inputs.len() as f64;
        let m = EpochMetrics {
            fold: None,
            epoch: epoch + 1,
            step,
            lr,
            loss: loss / n,
            mlm_loss: (masked > 0).then_some(mlm / n),
            lpp_loss: lattice.as_ref().map(|_| lpp / n),
            mlm_accuracy: (masked > 0).then(|| correct as f64 / masked as f64),
            train_mae: None,
            val_mae: None,
        };
        let flow = observer(&m);
        metrics.push(m);
        if flow == Flow::Stop {
            break;
        }
    }
    Ok((metrics, step))
}

/// Masked-token accuracy at one sequence position in eval mode.
///
/// Every input has `position` masked together with enough other randomly
/// chosen space-group positions to reach `round(ratio * 12)` masks.
pub fn masked_position_accuracy(
    state: &EncoderState<f32>,
    inputs: &[ModelInput],
    position: usize,
    ratio: f64,
    seed: u64,
    batch_size: usize,
) -> Result<f64, TrainingError> {
    if inputs.is_empty() {
        return Err(TrainingError::EmptySplit("accuracy probe"));
    }
    if !(1..=SG_TOKENS).contains(&position) {
        return Err(TrainingError::Config(format!("position {position} is not a space-group position")));
    }
    let mut rng = stream_rng(seed, 0);
    let extra = masked_count(ratio).clamp(1, SG_TOKENS) - 1;
    let mut correct = 0usize;
    for chunk in inputs.chunks(batch_size.max(1)) {
        let mut plans = Vec::with_capacity(chunk.len());
        let masked: Vec<ModelInput> = chunk
            .iter()
            .map(|inp| {
                let others: Vec<usize> = (1..=SG_TOKENS).filter(|&p| p != position).collect();
                let mut positions: Vec<usize> = sample(&mut rng, others.len(), extra).into_iter().map(|i| others[i]).collect();
                positions.push(position);
                let mut m = inp.clone();
                for &p in &positions {
                    m.seq.ids[p] = MASK_ID;
                }
                plans.push(MaskingPlan {
                    labels: vec![inp.seq.ids[position]],
                    positions: vec![position],
                    ratio,
                });
                m
            })
            .collect();
        let mut g = Graph::<f32>::new();
        let out = state.forward(&mut g, &masked, Mode::Eval, &mut rng)?;
        let rows = (0..chunk.len()).map(|b| b * out.seq_len + position).collect();
        let logits = state.mlm_logits(&mut g, out.hidden, rows)?;
        let t = g.value(logits);
        for (r, plan) in plans.iter().enumerate() {
            correct += usize::from(argmax(t.row(r)) == plan.labels[0]);
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Six lattice parameters per input, in Å and degrees.
pub fn predict_lattice(bundle: &ModelBundle, inputs: &[ModelInput], batch_size: usize) -> Result<Vec<[f64; 6]>, TrainingError> {
    let scaler = bundle
        .lattice_scaler
        .as_ref()
        .ok_or_else(|| TrainingError::Mismatch("model has no lattice scaler".into()))?;
    let mut out = Vec::with_capacity(inputs.len());
    let mut rng = stream_rng(0, 0);
    for chunk in inputs.chunks(batch_size.max(1)) {
        let mut g = Graph::<f32>::new();
        let f = bundle.state.forward(&mut g, chunk, Mode::Eval, &mut rng)?;
        let p = bundle.state.head(&mut g, &bundle.state.lpp, f.cls, Mode::Eval, &mut rng)?;
        let t = g.value(p);
        for r in 0..chunk.len() {
            let z: Vec<f64> = t.row(r).iter().map(|&x| f64::from(x)).collect();
            let v = scaler.inverse(&z)?;
            out.push([v[0], v[1], v[2], v[3], v[4], v[5]]);
        }
    }
    Ok(out)
}

/// Standardized regression outputs of the finetuning head.
fn predict_standardized(state: &EncoderState<f32>, inputs: &[ModelInput], batch_size: usize) -> Result<Vec<f64>, TrainingError> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut rng = stream_rng(0, 0);
    for chunk in inputs.chunks(batch_size.max(1)) {
        let mut g = Graph::<f32>::new();
        let f = state.forward(&mut g, chunk, Mode::Eval, &mut rng)?;
        let p = finetune_head(state, &mut g, f.cls, Mode::Eval, &mut rng)?;
        out.extend(g.value(p).data().iter().map(|&x| f64::from(x)));
    }
    Ok(out)
}

/// Regression predictions in target units, sharded over `workers` threads.
pub fn predict_values(
    state: &EncoderState<f32>,
    scaler: &TargetScaler,
    inputs: &[ModelInput],
    batch_size: usize,
    workers: usize,
) -> Result<Vec<f64>, TrainingError> {
    let batch_size = batch_size.max(1);
    let shards = workers.clamp(1, inputs.len().div_ceil(batch_size).max(1));
    let z = if shards == 1 {
        predict_standardized(state, inputs, batch_size)?
    } else {
        let per = inputs.len().div_ceil(batch_size).div_ceil(shards) * batch_size;
        let parts: Vec<Result<Vec<f64>, TrainingError>> = std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .chunks(per)
                .map(|part| s.spawn(move || predict_standardized(state, part, batch_size)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
        });
        let mut z = Vec::with_capacity(inputs.len());
        for p in parts {
            z.extend(p?);
        }
        z
    };
    z.iter().map(|&v| Ok(scaler.inverse(&[v])?[0])).collect()
}

/// Mean absolute error, summed in a canonical order so the result does
/// not depend on record order.
pub fn mean_absolute_error(predictions: &[f64], targets: &[f64]) -> f64 {
    let mut errs: Vec<f64> = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).collect();
    errs.sort_by(f64::total_cmp);
    errs.iter().sum::<f64>() / errs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub target: Option<f64>,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mae: f64,
    pub predictions: Vec<Prediction>,
}

fn scaler_of(bundle: &ModelBundle) -> Result<&TargetScaler, TrainingError> {
    bundle
        .target_scaler
        .as_ref()
        .ok_or_else(|| TrainingError::Mismatch("model has not been finetuned (no target scaler)".into()))
}

/// Predictions for arbitrary records; targets are passed through when present.
pub fn predict(bundle: &ModelBundle, records: &[CrystalRecord], batch_size: usize, workers: usize) -> Result<Vec<Prediction>, TrainingError> {
    let inputs = bundle.inputs(records)?;
    let values = predict_values(&bundle.state, scaler_of(bundle)?, &inputs, batch_size, workers)?;
    Ok(records
        .iter()
        .zip(values)
        .map(|(r, prediction)| Prediction {
            id: r.id.clone(),
            target: r.target,
            prediction,
        })
        .collect())
}

/// Deterministic eval-mode MAE over labelled records.
pub fn evaluate(bundle: &ModelBundle, records: &[CrystalRecord], batch_size: usize, workers: usize) -> Result<Evaluation, TrainingError> {
    if records.is_empty() {
        return Err(TrainingError::EmptySplit("evaluation split"));
    }
    let targets: Vec<f64> = records.iter().map(CrystalRecord::require_target).collect::<Result<_, _>>()?;
    let predictions = predict(bundle, records, batch_size, workers)?;
    let values: Vec<f64> = predictions.iter().map(|p| p.prediction).collect();
    Ok(Evaluation {
        mae: mean_absolute_error(&values, &targets),
        predictions,
    })
}

/// Final-layer `[CLS]` vectors, one per input.
pub fn cls_embeddings(state: &EncoderState<f32>, inputs: &[ModelInput], batch_size: usize) -> Result<Vec<Vec<f32>>, TrainingError> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut rng = stream_rng(0, 0);
    for chunk in inputs.chunks(batch_size.max(1)) {
        let mut g = Graph::<f32>::new();
        let f = state.forward(&mut g, chunk, Mode::Eval, &mut rng)?;
        let t = g.value(f.cls);
        out.extend((0..chunk.len()).map(|r| t.row(r).to_vec()));
    }
    Ok(out)
}

/// Eval-mode attention maps of each input.
pub fn attention_maps(state: &EncoderState<f32>, inputs: &[ModelInput]) -> Result<Vec<AttentionMap>, TrainingError> {
    let mut rng = stream_rng(0, 0);
    let mut out = Vec::with_capacity(inputs.len());
    for input in inputs {
        let mut g = Graph::<f32>::new();
        let f = state.forward_recording(&mut g, std::slice::from_ref(input), Mode::Eval, &mut rng)?;
        out.extend(f.attention_maps(&g, state.config().n_heads)?);
    }
    Ok(out)
}

/// Labelled inputs for regression.
#[derive(Debug, Clone, Copy)]
pub struct Labelled<'a> {
    pub inputs: &'a [ModelInput],
    pub targets: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct RegressorRun {
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose weights were kept (the last one unless early stopping
    /// restored a better one).
    pub best_epoch: usize,
    pub steps: u64,
}

/// Trains the finetuning head and encoder with an MAE loss on standardized
/// targets. With a validation set, reports its MAE each epoch and, when
/// `patience > 0`, stops early and restores the best weights.
pub fn train_regressor(
    state: &mut EncoderState<f32>,
    scaler: &TargetScaler,
    train: Labelled<'_>,
    val: Option<Labelled<'_>>,
    cfg: &TrainConfig,
    fold: Option<usize>,
    observer: &mut dyn FnMut(&EpochMetrics) -> Flow,
) -> Result<RegressorRun, TrainingError> {
    if train.inputs.is_empty() {
        return Err(TrainingError::EmptySplit("training split"));
    }
    let z: Vec<f64> = train.targets.iter().map(|&t| Ok(scaler.transform(&[t])?[0])).collect::<Result<_, TrainingError>>()?;
    let sched = schedule(cfg, train.inputs.len())?;
    let mut opt = AdamW::new(state.store(), AdamWSettings { weight_decay: cfg.weight_decay, ..Default::default() });
    let mut metrics = Vec::new();
    let mut step = 0u64;
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut best_epoch = 0;
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut lr = 0.0;
        for idx in epoch_batches(train.inputs.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = gather(train.inputs, &idx);
            let t: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
            let mut rng = stream_rng(cfg.seed, step);
            let mut g = Graph::<f32>::new();
            let f = state.forward(&mut g, &batch, Mode::Train, &mut rng)?;
            let p = finetune_head(state, &mut g, f.cls, Mode::Train, &mut rng)?;
            let l = finetune_loss(&mut g, p, &t)?;
            loss += idx.len() as f64 * f64::from(g.value(l).data()[0]);
            g.backward(l, state.store_mut())?;
            lr = sched.lr_at(step)?;
            opt.step(state.store_mut(), lr)?;
            step += 1;
        }
        let loss = loss / train.inputs.len() as f64;
        let val_mae = match val {
            Some(v) if !v.inputs.is_empty() => {
                let p = predict_values(state, scaler, v.inputs, cfg.batch_size, cfg.workers())?;
                Some(mean_absolute_error(&p, v.targets))
            }
            _ => None,
        };
        let m = EpochMetrics {
            fold,
            epoch: epoch + 1,
            step,
            lr,
            loss,
            mlm_loss: None,
            lpp_loss: None,
            mlm_accuracy: None,
            train_mae: Some(loss * scaler.std[0]),
            val_mae,
        };
        best_epoch = epoch + 1;
        let mut flow = observer(&m);
        metrics.push(m);
        if let (Some(v), true) = (val_mae, cfg.patience > 0) {
            match &best {
                Some((b, _, _)) if v >= *b => {}
                _ => best = Some((v, epoch + 1, state.store().clone())),
            }
            if let Some((_, e, _)) = &best {
                if epoch + 1 - e >= cfg.patience {
                    flow = Flow::Stop;
                }
            }
        }
        if flow == Flow::Stop {
            break;
        }
    }
    if let Some((_, e, store)) = best {
        *state = EncoderState::from_store(state.config().clone(), store)?;
        best_epoch = e;
    }
    Ok(RegressorRun { metrics, best_epoch, steps: step })
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub run: RegressorRun,
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    pub test_mae: f64,
    pub predictions: Vec<Prediction>,
    pub bundle: ModelBundle,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub partition: Partition,
    pub folds: Vec<FoldOutcome>,
    pub mean_mae: f64,
    /// Population standard deviation of the fold test MAEs.
    pub std_mae: f64,
}

/// Train/validation/test index sets of every fold under `spec`.
pub fn fold_plan(partition: &Partition, spec: &SplitSpec) -> Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    match spec {
        SplitSpec::KFold(k) => (0..*k)
            .map(|i| {
                let (train, test) = partition.fold(i);
                (train, Vec::new(), test)
            })
            .collect(),
        SplitSpec::Ratio(p) if p.len() == 3 => vec![(
            partition.groups[0].clone(),
            partition.groups[1].clone(),
            partition.groups[2].clone(),
        )],
        SplitSpec::Ratio(_) => vec![(partition.groups[0].clone(), Vec::new(), partition.groups[1].clone())],
    }
}

/// Splits `records`, then per fold fits a target scaler on the training
/// part, trains from `init` (or a fresh model) and reports the test MAE in
/// target units.
pub fn finetune(
    records: &[CrystalRecord],
    cfg: &TrainConfig,
    init: Option<&ModelBundle>,
    elements: ElementSet,
    observer: &mut dyn FnMut(&EpochMetrics) -> Flow,
) -> Result<FinetuneOutcome, TrainingError> {
    cfg.validate()?;
    let targets: Vec<f64> = records.iter().map(CrystalRecord::require_target).collect::<Result<_, _>>()?;
    let template = match init {
        Some(b) => {
            let mut b = b.clone();
            b.config = cfg.clone();
            b
        }
        None => ModelBundle::new(corpus_vocabulary(records, cfg.info_layout()?), elements, cfg)?,
    };
    let inputs = template.inputs(records)?;
    let partition = split(records.len(), &cfg.split, cfg.seed)?;
    let mut folds = Vec::new();
    for (fold, (train, val, test)) in fold_plan(&partition, &cfg.split).into_iter().enumerate() {
        let pick = |idx: &[usize]| -> (Vec<ModelInput>, Vec<f64>) { (gather(&inputs, idx), idx.iter().map(|&i| targets[i]).collect()) };
        let (tr_in, tr_t) = pick(&train);
        let (va_in, va_t) = pick(&val);
        let scaler = TargetScaler::fit_scalar(&tr_t)?;
        let mut bundle = template.clone();
        if init.is_none() {
            bundle.state = EncoderState::new(bundle.state.config().clone(), cfg.seed.wrapping_add(fold as u64))?;
        }
        let run = train_regressor(
            &mut bundle.state,
            &scaler,
            Labelled { inputs: &tr_in, targets: &tr_t },
            (!va_in.is_empty()).then_some(Labelled { inputs: &va_in, targets: &va_t }),
            cfg,
            Some(fold),
            observer,
        )?;
        bundle.target_scaler = Some(scaler);
        bundle.stage = "finetuned".into();
        let workers = cfg.workers();
        let train_mae = mean_absolute_error(&predict_values(&bundle.state, bundle.target_scaler.as_ref().unwrap(), &tr_in, cfg.batch_size, workers)?, &tr_t);
        let val_mae = if va_in.is_empty() {
            None
        } else {
            Some(mean_absolute_error(&predict_values(&bundle.state, bundle.target_scaler.as_ref().unwrap(), &va_in, cfg.batch_size, workers)?, &va_t))
        };
        let test_records: Vec<CrystalRecord> = test.iter().map(|&i| records[i].clone()).collect();
        let eval = evaluate(&bundle, &test_records, cfg.batch_size, workers)?;
        folds.push(FoldOutcome {
            fold,
            train,
            val,
            test,
            run,
            train_mae,
            val_mae,
            test_mae: eval.mae,
            predictions: eval.predictions,
            bundle,
        });
    }
    let maes: Vec<f64> = folds.iter().map(|f| f.test_mae).collect();
    let mean_mae = maes.iter().sum::<f64>() / maes.len() as f64;
    let std_mae = (maes.iter().map(|m| (m - mean_mae).powi(2)).sum::<f64>() / maes.len() as f64).sqrt();
    Ok(FinetuneOutcome {
        partition,
        folds,
        mean_mae,
        std_mae,
    })
}
