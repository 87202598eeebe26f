use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde_json::json;

use sgformer::data::{file_sha256, CrystalRecord};
use sgformer::embedding::BinSpec;
use sgformer::encoder::LayerSelector;
use sgformer::grammar::{lookup_space_group, parse_formula};
use sgformer::porosity::{
    compute_porosity, porosity_tokens, validity_warnings, GridSpec, PeriodicStructure, PorosityOptions, RadiusTable,
    DEFAULT_DENSITY, DEFAULT_PROBE_RADIUS,
};
use sgformer::training::{
    attention_maps, cls_embeddings, corpus_vocabulary, evaluate, finetune, predict, predict_lattice, pretrain,
    pretrain_bundle, write_metrics, write_predictions, EpochMetrics, Flow, ModelBundle, RunManifest, TrainConfig,
};

use crate::fail::{Classify, Failure};
use crate::settings::{element_set, load_source, Layers, Source};
use crate::{Command, ExportArgs, LookupArgs, ModelArgs, OutputFormat, ParseFormulaArgs, PorosityArgs, TokenizeArgs, TrainArgs};

const SG_FIELDS: [&str; 12] = [
    "symbol",
    "number",
    "order",
    "point_group",
    "crystal_system",
    "laue_class",
    "symmetry",
    "polarity",
    "centering",
    "direction_1",
    "direction_2",
    "direction_3",
];

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Lookup(a) => lookup(a),
        Command::ParseFormula(a) => parse_formula_cmd(a),
        Command::Tokenize(a) => tokenize(a),
        Command::Porosity(a) => porosity(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Export(a) => export(a),
    }
}

fn format_name(f: Option<OutputFormat>) -> Option<String> {
    f.map(|f| match f {
        OutputFormat::Text => "text".to_string(),
        OutputFormat::Json => "json".to_string(),
    })
}

fn output_format(layers: &Layers) -> Result<OutputFormat, Failure> {
    layers.str("format")?.map_or(Ok(OutputFormat::Text), |s| OutputFormat::parse(&s))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).runtime()?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn written(r: io::Result<()>) -> Result<(), Failure> {
    r.context("writing output").runtime()
}

fn cores(workers: Option<usize>) -> usize {
    match workers {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism().map_or(1, usize::from),
    }
}

fn lookup(a: LookupArgs) -> Result<(), Failure> {
    let rec = lookup_space_group(a.spacegroup).invalid()?;
    let tokens = rec.token_strings();
    let mut out = io::stdout().lock();
    let r = match a.format.unwrap_or(OutputFormat::Text) {
        OutputFormat::Json => writeln!(out, "{}", json!({ "record": rec, "tokens": tokens })),
        OutputFormat::Text => (|| {
            writeln!(out, "position\tfield\ttoken")?;
            for (i, (f, t)) in SG_FIELDS.iter().zip(&tokens).enumerate() {
                writeln!(out, "{}\t{f}\t{}", i + 1, if t.is_empty() { "-" } else { t })?;
            }
            Ok(())
        })(),
    };
    written(r)
}

fn parse_formula_cmd(a: ParseFormulaArgs) -> Result<(), Failure> {
    let comp = parse_formula(&a.formula).invalid()?;
    let mut out = io::stdout().lock();
    let r = match a.format.unwrap_or(OutputFormat::Text) {
        OutputFormat::Json => {
            let rows: Vec<_> = comp.entries().iter().map(|(e, f)| json!({ "element": e, "fraction": f })).collect();
            writeln!(out, "{}", json!({ "formula": comp.to_formula_string(), "fractions": rows }))
        }
        OutputFormat::Text => (|| {
            writeln!(out, "element\tfraction")?;
            for (e, f) in comp.entries() {
                writeln!(out, "{e}\t{f}")?;
            }
            Ok(())
        })(),
    };
    written(r)
}

fn tokenize(a: TokenizeArgs) -> Result<(), Failure> {
    let mut layers = Layers::load(a.config.as_deref())?;
    layers.set("data", a.data.clone());
    layers.set_path("checkpoint", &a.checkpoint);
    layers.set("layout", a.layout.clone());
    layers.set_u64("seed", a.seed);
    layers.set("allow_partial", a.allow_partial.then_some(true));
    layers.set_path("out", &a.out);
    layers.set("format", format_name(a.format));
    let fmt = output_format(&layers)?;
    let records = match (&a.formula, a.spacegroup) {
        (Some(f), Some(sg)) => vec![CrystalRecord::new("input", f.clone(), sg)],
        _ => {
            let data = layers.str("data")?.ok_or_else(|| Failure::invalid("pass --formula with --spacegroup, or --data"))?;
            load_source(&data, layers.seed()?, layers.bool("allow_partial")?.unwrap_or(false))?.records
        }
    };
    let (vocab, table) = match layers.path("checkpoint")? {
        Some(p) => {
            let b = ModelBundle::load(&p)?;
            (b.vocab, b.elements.table)
        }
        None => {
            let layout = sgformer::embedding::InfoLayout::from_text(&layers.str("layout")?.unwrap_or_else(|| "-".into()))
                .map_err(Failure::invalid)?;
            let table = element_set(&layers, &TrainConfig::default())?.table;
            (corpus_vocabulary(&records, layout), table)
        }
    };
    let mut out = sink(layers.path("out")?.as_deref())?;
    for r in &records {
        let input = r.to_model_input(&vocab, &table).with_context(|| format!("record {}", r.id)).invalid()?;
        let labels: Vec<String> = input.seq.ids.iter().map(|&id| vocab.label(id)).collect();
        let line = match fmt {
            OutputFormat::Json => json!({ "id": r.id, "tokens": labels, "ids": input.seq.ids }).to_string(),
            OutputFormat::Text => format!("{}\t{}", r.id, labels.join("\t")),
        };
        written(writeln!(out, "{line}"))?;
    }
    written(out.flush())
}

fn porosity(a: PorosityArgs) -> Result<(), Failure> {
    let mut layers = Layers::load(a.config.as_deref())?;
    layers.set("rho_grid", a.rho_grid);
    layers.set("r_probe", a.r_probe);
    layers.set("flood_fill", a.no_floodfill.then_some(false));
    layers.set_path("radii", &a.radii);
    layers.set_usize("workers", a.workers);
    layers.set_path("out", &a.out);
    layers.set("format", format_name(a.format));
    let fmt = output_format(&layers)?;
    let structure = PeriodicStructure::load(&a.structure)
        .with_context(|| format!("reading {}", a.structure.display()))
        .invalid()?;
    let mut radii = RadiusTable::default();
    if let Some(p) = layers.path("radii")? {
        radii = radii.with_overrides(&RadiusTable::load(&p).with_context(|| format!("reading {}", p.display())).invalid()?);
    }
    let opts = PorosityOptions {
        grid: GridSpec::new(layers.f64("rho_grid")?.unwrap_or(DEFAULT_DENSITY)).invalid()?,
        probe_radius: layers.f64("r_probe")?.unwrap_or(DEFAULT_PROBE_RADIUS),
        flood_fill: layers.bool("flood_fill")?.unwrap_or(true),
        workers: cores(layers.usize("workers")?),
    };
    for w in validity_warnings(&structure, &radii, opts.probe_radius) {
        log::warn!("{w}");
    }
    let result = compute_porosity(&structure, &radii, &opts).invalid()?;
    let (tok_void, tok_acc) = porosity_tokens(&result, &BinSpec::default()).invalid()?;
    let mut out = sink(layers.path("out")?.as_deref())?;
    let r = match fmt {
        OutputFormat::Json => {
            let mut doc = serde_json::to_value(&result).runtime()?;
            doc["volume"] = json!(structure.volume());
            doc["atoms"] = json!(structure.sites().len());
            doc["flood_fill"] = json!(opts.flood_fill);
            doc["porosity_token"] = json!(tok_void);
            doc["acc_porosity_token"] = json!(tok_acc);
            writeln!(out, "{doc}")
        }
        OutputFormat::Text => (|| {
            writeln!(out, "void_fraction\t{}", result.void_fraction)?;
            writeln!(out, "accessible_fraction\t{}", result.accessible_fraction)?;
            writeln!(out, "unoccupied\t{}", result.unoccupied)?;
            writeln!(out, "admissible\t{}", result.admissible)?;
            writeln!(out, "accessible\t{}", result.accessible)?;
            writeln!(out, "total\t{}", result.total)?;
            writeln!(out, "dims\t{}\t{}\t{}", result.dims[0], result.dims[1], result.dims[2])?;
            writeln!(out, "rho_grid\t{}", result.density)?;
            writeln!(out, "r_probe\t{}", result.probe_radius)?;
            writeln!(out, "flood_fill\t{}", opts.flood_fill)?;
            writeln!(out, "volume\t{}", structure.volume())?;
            writeln!(out, "atoms\t{}", structure.sites().len())?;
            writeln!(out, "porosity_token\t{tok_void}")?;
            writeln!(out, "acc_porosity_token\t{tok_acc}")
        })(),
    };
    written(r.and_then(|_| out.flush()))
}

fn train_layers(a: &TrainArgs) -> Result<Layers, Failure> {
    let mut l = Layers::load(a.config.as_deref())?;
    l.set("preset", a.preset.clone());
    l.set("objective", a.objective.clone());
    l.set("layout", a.layout.clone());
    l.set_usize("epochs", a.epochs);
    l.set_usize("batch_size", a.batch_size);
    l.set("lr", a.lr);
    l.set("weight_decay", a.weight_decay);
    l.set("warmup_fraction", a.warmup_fraction);
    l.set("mask_ratio", a.mask_ratio);
    l.set("lambda", a.lambda);
    l.set("split", a.split.clone());
    l.set_u64("seed", a.seed);
    l.set_usize("patience", a.patience);
    l.set_usize("workers", a.workers);
    l.set_u64("element_seed", a.element_seed);
    l.set("dropout", a.dropout);
    l.set_path("elements", &a.elements);
    l.set("data", a.data.clone());
    l.set_path("checkpoint", &a.checkpoint);
    l.set_path("out_dir", &a.out_dir);
    l.set("allow_partial", a.allow_partial.then_some(true));
    l.set("format", format_name(a.format));
    Ok(l)
}

struct Run {
    cfg: TrainConfig,
    fmt: OutputFormat,
    out_dir: PathBuf,
    source: Source,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn start(command: &str, layers: &Layers) -> Result<Run, Failure> {
        let cfg = layers.train_config()?;
        let fmt = output_format(layers)?;
        let out_dir = layers.require_path("out_dir", "--out-dir")?;
        let data = layers.str("data")?.ok_or_else(|| Failure::invalid("missing --data (config key `data`)"))?;
        let source = load_source(&data, cfg.seed, layers.bool("allow_partial")?.unwrap_or(false))?;
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))
            .runtime()?;
        let mut manifest = RunManifest::new(command, &cfg);
        manifest.datasets.insert(source.name.clone(), source.digest.clone());
        log::info!("{command}: {} records from {}", source.records.len(), source.name);
        Ok(Run {
            cfg,
            fmt,
            out_dir,
            source,
            manifest,
            started: Instant::now(),
        })
    }

    fn record_file(&mut self, path: &Path) -> Result<(), Failure> {
        let digest = file_sha256(path).runtime()?;
        self.manifest.artifacts.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())).runtime()?;
        self.record_file(&path)?;
        Ok(path)
    }

    fn save_checkpoint(&mut self, bundle: &ModelBundle, steps: u64, name: &str) -> Result<PathBuf, Failure> {
        let path = self.out_dir.join(name);
        bundle.to_checkpoint(steps).save(&path).runtime()?;
        self.record_file(&path)?;
        self.manifest.checkpoints.push(path.display().to_string());
        Ok(path)
    }

    fn finish(mut self, metrics: Vec<EpochMetrics>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        written(write_metrics(&mut buf, &metrics))?;
        self.write_text("metrics.tsv", std::str::from_utf8(&buf).expect("metrics are utf-8"))?;
        let cfg_text = self.cfg.to_toml();
        self.write_text("config.toml", &cfg_text)?;
        self.manifest.metrics = metrics;
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out_dir.join("manifest.json");
        self.manifest.save(&path).runtime()?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn emit(fmt: OutputFormat, m: &EpochMetrics) -> Flow {
    let line = match fmt {
        OutputFormat::Json => serde_json::to_string(m).expect("metrics serialize"),
        OutputFormat::Text => m.to_line(),
    };
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    Flow::Continue
}

fn pretrain_cmd(a: TrainArgs) -> Result<(), Failure> {
    let layers = train_layers(&a)?;
    let mut run = Run::start("pretrain", &layers)?;
    let fmt = run.fmt;
    let mut observer = |m: &EpochMetrics| emit(fmt, m);
    let (bundle, metrics, steps) = match layers.path("checkpoint")? {
        Some(p) => {
            let mut b = ModelBundle::load(&p)?;
            b.config = run.cfg.clone();
            let (metrics, steps) = pretrain_bundle(&mut b, &run.source.records, &run.cfg, &mut observer)?;
            (b, metrics, steps)
        }
        None => {
            let o = pretrain(&run.source.records, &run.cfg, element_set(&layers, &run.cfg)?, &mut observer)?;
            (o.bundle, o.metrics, o.steps)
        }
    };
    let ck = run.save_checkpoint(&bundle, steps, "model.ckpt")?;
    run.manifest.results.insert("steps".into(), steps.to_string());
    if let Some(m) = metrics.last() {
        run.manifest.results.insert("final_loss".into(), m.loss.to_string());
    }
    let summary = json!({ "summary": { "checkpoint": ck.display().to_string(), "steps": steps, "epochs": metrics.len() } });
    run.finish(metrics)?;
    let mut out = io::stdout().lock();
    written(match fmt {
        OutputFormat::Json => writeln!(out, "{summary}"),
        OutputFormat::Text => writeln!(out, "checkpoint\t{}\nsteps\t{steps}", ck.display()),
    })
}

fn finetune_cmd(a: TrainArgs) -> Result<(), Failure> {
    let layers = train_layers(&a)?;
    let mut run = Run::start("finetune", &layers)?;
    let fmt = run.fmt;
    let init = layers.path("checkpoint")?.map(|p| ModelBundle::load(&p)).transpose()?;
    let elements = match &init {
        Some(b) => b.elements.clone(),
        None => element_set(&layers, &run.cfg)?,
    };
    let outcome = finetune(&run.source.records, &run.cfg, init.as_ref(), elements, &mut |m| emit(fmt, m))?;
    let mut metrics = Vec::new();
    let mut folds = Vec::new();
    for f in &outcome.folds {
        run.save_checkpoint(&f.bundle, f.run.steps, &format!("fold-{}.ckpt", f.fold))?;
        let mut buf = Vec::new();
        written(write_predictions(&mut buf, &f.predictions))?;
        run.write_text(&format!("predictions-fold-{}.tsv", f.fold), std::str::from_utf8(&buf).expect("utf-8"))?;
        run.manifest.results.insert(format!("fold_{}_test_mae", f.fold), f.test_mae.to_string());
        metrics.extend(f.run.metrics.iter().cloned());
        folds.push(json!({
            "fold": f.fold,
            "test_mae": f.test_mae,
            "val_mae": f.val_mae,
            "train_mae": f.train_mae,
            "best_epoch": f.run.best_epoch,
        }));
    }
    run.manifest.results.insert("mean_mae".into(), outcome.mean_mae.to_string());
    run.manifest.results.insert("std_mae".into(), outcome.std_mae.to_string());
    run.finish(metrics)?;
    let mut out = io::stdout().lock();
    written(match fmt {
        OutputFormat::Json => writeln!(
            out,
            "{}",
            json!({ "summary": { "folds": folds, "mean_mae": outcome.mean_mae, "std_mae": outcome.std_mae } })
        ),
        OutputFormat::Text => (|| {
            for f in &outcome.folds {
                writeln!(out, "fold\t{}\t{}", f.fold, f.test_mae)?;
            }
            writeln!(out, "mean\t{}\t{}", outcome.mean_mae, outcome.std_mae)
        })(),
    })
}

struct Loaded {
    layers: Layers,
    bundle: ModelBundle,
    records: Vec<CrystalRecord>,
    batch: usize,
    workers: usize,
    fmt: OutputFormat,
}

fn load_model(a: &ModelArgs) -> Result<Loaded, Failure> {
    let mut layers = Layers::load(a.config.as_deref())?;
    layers.set_path("checkpoint", &a.checkpoint);
    layers.set("data", a.data.clone());
    layers.set_usize("batch_size", a.batch_size);
    layers.set_usize("workers", a.workers);
    layers.set_u64("seed", a.seed);
    layers.set("allow_partial", a.allow_partial.then_some(true));
    layers.set_path("out", &a.out);
    layers.set("format", format_name(a.format));
    let fmt = output_format(&layers)?;
    let ck = layers.require_path("checkpoint", "--checkpoint")?;
    let bundle = ModelBundle::load(&ck)?;
    let data = layers.str("data")?.ok_or_else(|| Failure::invalid("missing --data (config key `data`)"))?;
    let records = load_source(&data, layers.seed()?, layers.bool("allow_partial")?.unwrap_or(false))?.records;
    let batch = layers.usize("batch_size")?.unwrap_or(bundle.config.batch_size).max(1);
    let workers = cores(layers.usize("workers")?);
    Ok(Loaded {
        layers,
        bundle,
        records,
        batch,
        workers,
        fmt,
    })
}

fn evaluate_cmd(a: ModelArgs) -> Result<(), Failure> {
    let m = load_model(&a)?;
    let e = evaluate(&m.bundle, &m.records, m.batch, m.workers)?;
    if let Some(p) = m.layers.path("out")? {
        let mut w = sink(Some(&p))?;
        written(write_predictions(&mut w, &e.predictions).and_then(|_| w.flush()))?;
    }
    let mut out = io::stdout().lock();
    written(match m.fmt {
        OutputFormat::Json => writeln!(out, "{}", json!({ "mae": e.mae, "records": m.records.len() })),
        OutputFormat::Text => writeln!(out, "mae\t{}\nrecords\t{}", e.mae, m.records.len()),
    })
}

fn predict_cmd(a: ModelArgs) -> Result<(), Failure> {
    let m = load_model(&a)?;
    let mut out = sink(m.layers.path("out")?.as_deref())?;
    if m.bundle.target_scaler.is_some() {
        let preds = predict(&m.bundle, &m.records, m.batch, m.workers)?;
        match m.fmt {
            OutputFormat::Text => written(write_predictions(&mut out, &preds))?,
            OutputFormat::Json => {
                for p in &preds {
                    written(writeln!(out, "{}", serde_json::to_string(p).expect("prediction serializes")))?;
                }
            }
        }
    } else if m.bundle.lattice_scaler.is_some() {
        let inputs = m.bundle.inputs(&m.records)?;
        let lattices = predict_lattice(&m.bundle, &inputs, m.batch)?;
        if m.fmt == OutputFormat::Text {
            written(writeln!(out, "id\ta\tb\tc\talpha\tbeta\tgamma"))?;
        }
        for (r, l) in m.records.iter().zip(&lattices) {
            let line = match m.fmt {
                OutputFormat::Json => json!({ "id": r.id, "lattice": l }).to_string(),
                OutputFormat::Text => format!("{}\t{}", r.id, l.map(|v| v.to_string()).join("\t")),
            };
            written(writeln!(out, "{line}"))?;
        }
    } else {
        return Err(Failure::invalid("checkpoint has neither a property head scaler nor a lattice scaler"));
    }
    written(out.flush())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    let mut m = load_model(&a.model)?;
    m.layers.set("layer", a.layer.clone());
    let inputs = m.bundle.inputs(&m.records)?;
    let mut out = sink(m.layers.path("out")?.as_deref())?;
    if a.attention {
        let sel: LayerSelector = m.layers.str("layer")?.unwrap_or_else(|| "all".into()).parse().map_err(Failure::invalid)?;
        let maps = attention_maps(&m.bundle.state, &inputs)?;
        for (input, map) in inputs.iter().zip(&maps) {
            let labels = input.seq.ids.iter().map(|&id| m.bundle.vocab.label(id)).collect();
            let doc = map.export(sel, labels, input.record_id.clone()).invalid()?;
            written(writeln!(out, "{}", doc.to_json()))?;
        }
    } else {
        let rows = cls_embeddings(&m.bundle.state, &inputs, m.batch)?;
        for (r, v) in m.records.iter().zip(&rows) {
            let line = match m.fmt {
                OutputFormat::Json => json!({ "id": r.id, "cls": v }).to_string(),
                OutputFormat::Text => {
                    let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    format!("{}\t{}", r.id, vals.join("\t"))
                }
            };
            written(writeln!(out, "{line}"))?;
        }
    }
    written(out.flush())
}
