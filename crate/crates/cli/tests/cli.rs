use std::path::Path;
use std::process::{Command, Output};

fn sgformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgformer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lookup_lists_the_twelve_tokens() {
    let o = sgformer(&["lookup", "225"]);
    assert_eq!(code(&o), 0);
    let tokens: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().to_string()).collect();
    assert_eq!(
        tokens,
        ["F 4/m -3 2/m", "225", "192", "m-3m", "cubic", "m-3m", "Centrosymmetric", "non-polar", "F", "4/m", "-3", "2/m"]
    );
    let json: serde_json::Value = serde_json::from_str(&stdout(&sgformer(&["lookup", "225", "--format", "json"]))).unwrap();
    assert_eq!(json["tokens"][4], "cubic");
    assert_eq!(code(&sgformer(&["lookup", "0"])), 2);
    assert_eq!(code(&sgformer(&["lookup", "231"])), 2);
}

#[test]
fn exit_codes_for_usage_and_help() {
    assert_eq!(code(&sgformer(&["frobnicate"])), 1);
    assert_eq!(code(&sgformer(&["lookup"])), 1);
    assert_eq!(code(&sgformer(&["--help"])), 0);
    assert_eq!(code(&sgformer(&["export", "--checkpoint", "x", "--data", "kb-corpus"])), 1);
}

#[test]
fn help_names_the_config_key_of_every_flag() {
    for cmd in ["tokenize", "porosity", "pretrain", "finetune", "evaluate", "predict", "export"] {
        let o = sgformer(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.next() {
            let flag = line.trim_start();
            if !flag.starts_with("--") || ["--config", "--help", "--attention", "--cls-embeddings"].iter().any(|f| flag.starts_with(f)) {
                continue;
            }
            if flag.starts_with("--formula") || flag.starts_with("--spacegroup") {
                continue;
            }
            let help = lines.peek().copied().unwrap_or("");
            assert!(help.contains("[config: ") || line.contains("[config: "), "{cmd}: {flag} lacks a config key");
        }
    }
}

#[test]
fn formula_fractions() {
    let o = sgformer(&["parse-formula", "Fe2O3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "element\tfraction\nFe\t0.4\nO\t0.6\n");
    assert_eq!(code(&sgformer(&["parse-formula", "Xx2"])), 2);
}

#[test]
fn tokenize_single_crystal() {
    let o = sgformer(&["tokenize", "--formula", "NaCl", "--spacegroup", "225"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(fields[0], "input");
    assert_eq!(fields[1], "[CLS]");
    assert_eq!(fields[3], "225");
    assert_eq!(&fields[14..16], ["Na", "Cl"]);
}

fn sphere_fixture(dir: &Path) -> (String, String) {
    let s = dir.join("sphere.txt");
    std::fs::write(&s, "lattice\n10 0 0\n0 10 0\n0 0 10\nsites\nX 0.5 0.5 0.5\n").unwrap();
    let r = dir.join("radii.txt");
    std::fs::write(&r, "X 2.0\n").unwrap();
    (path(&s).to_string(), path(&r).to_string())
}

fn porosity_doc(args: &[&str]) -> serde_json::Value {
    let mut full = vec!["porosity"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--format", "json"]);
    let o = sgformer(&full);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn porosity_defaults_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (s, r) = sphere_fixture(dir.path());
    let doc = porosity_doc(&[&s, "--radii", &r]);
    assert_eq!(doc["density"], 5.0);
    assert_eq!(doc["probe_radius"], 1.2);
    assert_eq!(doc["dims"], serde_json::json!([50, 50, 50]));
    let void = doc["void_fraction"].as_f64().unwrap();
    let acc = doc["accessible_fraction"].as_f64().unwrap();
    let sphere = |r: f64| 100.0 * (1.0 - 4.0 / 3.0 * std::f64::consts::PI * r.powi(3) / 1000.0);
    assert!((void - sphere(2.0)).abs() <= 0.3);
    assert!((acc - sphere(3.2)).abs() <= 0.5);

    let plain = porosity_doc(&[&s, "--radii", &r, "--r-probe", "0", "--no-floodfill"]);
    assert_eq!(plain["accessible_fraction"], plain["void_fraction"]);

    let cfg = dir.path().join("p.toml");
    std::fs::write(&cfg, "rho_grid = 2\nr_probe = 0.5\n").unwrap();
    let layered = porosity_doc(&[&s, "--radii", &r, "--config", path(&cfg), "--rho-grid", "3"]);
    assert_eq!(layered["density"], 3.0);
    assert_eq!(layered["probe_radius"], 0.5);

    assert_eq!(code(&sgformer(&["porosity", &s, "--radii", &r, "--r-probe=-1"])), 2);
    assert_eq!(code(&sgformer(&["porosity", "/nonexistent/structure.txt"])), 2);
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn pretraining_writes_one_metrics_line_per_epoch_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["pretrain", "--objective", "mlm", "--preset", "desk", "--data", "synthetic-lpp:24", "--batch-size", "8", "--out-dir", path(&out)];
        args.extend_from_slice(extra);
        let o = sgformer(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (out, stdout(&o))
    };
    let (a, streamed) = run("a", &["--epochs", "5"]);
    let metrics = String::from_utf8(read(&a.join("metrics.tsv"))).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(streamed.starts_with(&metrics));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["metrics"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["config"]["epochs"], 5);

    let (b, _) = run("b", &["--epochs", "5"]);
    assert_eq!(read(&a.join("model.ckpt")), read(&b.join("model.ckpt")));
    assert_eq!(read(&a.join("metrics.tsv")), read(&b.join("metrics.tsv")));

    let (c, _) = run("c", &["--epochs", "5", "--seed", "9"]);
    assert_ne!(read(&a.join("model.ckpt")), read(&c.join("model.ckpt")));
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "epochs = 3\nbatch_size = 8\ndata = \"synthetic-lpp:16\"\nobjective = \"mlm+lpp\"\n").unwrap();
    let out = dir.path().join("from-file");
    let o = sgformer(&["pretrain", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("metrics.tsv")).unwrap().lines().count(), 3);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("objective = \"mlm+lpp\""));

    let out = dir.path().join("override");
    let o = sgformer(&["pretrain", "--config", path(&cfg), "--epochs", "2", "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(out.join("metrics.tsv")).unwrap().lines().count(), 2);

    std::fs::write(&cfg, "epochz = 3\n").unwrap();
    assert_eq!(code(&sgformer(&["pretrain", "--config", path(&cfg), "--data", "kb-corpus", "--out-dir", path(&out)])), 2);
}

#[test]
fn validation_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&sgformer(&["pretrain", "--data", "kb-corpus"])), 2);
    assert_eq!(code(&sgformer(&["pretrain", "--data", "kb-corpus", "--out-dir", path(&out), "--objective", "lpp", "--epochs", "1"])), 2);
    assert_eq!(code(&sgformer(&["pretrain", "--data", "kb-corpus", "--out-dir", path(&out), "--split", "kfold1"])), 2);
    assert_eq!(code(&sgformer(&["pretrain", "--data", "missing.csv", "--out-dir", path(&out)])), 2);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let under_file = blocker.join("run");
    assert_eq!(code(&sgformer(&["pretrain", "--data", "kb-corpus", "--epochs", "0", "--out-dir", path(&under_file)])), 3);
}

#[test]
fn finetune_predict_evaluate_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ft");
    let o = sgformer(&["finetune", "--split", "kfold5", "--epochs", "2", "--batch-size", "16", "--data", "synthetic-regression:40", "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let folds: Vec<&str> = text.lines().filter(|l| l.starts_with("fold\t")).collect();
    assert_eq!(folds.len(), 5);
    assert_eq!(text.lines().filter(|l| l.starts_with("mean\t")).count(), 1);
    assert_eq!(std::fs::read_to_string(out.join("metrics.tsv")).unwrap().lines().count(), 10);

    let ck = out.join("fold-0.ckpt");
    let preds = sgformer(&["predict", "--checkpoint", path(&ck), "--data", "synthetic-regression:7", "--seed", "3"]);
    assert_eq!(code(&preds), 0);
    assert_eq!(stdout(&preds).lines().count(), 8);

    let ev = sgformer(&["evaluate", "--checkpoint", path(&ck), "--data", "synthetic-regression:40", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&ev)).unwrap();
    assert!(doc["mae"].as_f64().unwrap() >= 0.0);
    assert_eq!(doc["records"], 40);

    let cls = |name: &str| {
        let file = dir.path().join(name);
        let o = sgformer(&["export", "--cls-embeddings", "--checkpoint", path(&ck), "--data", "synthetic-regression:4", "--out", path(&file)]);
        assert_eq!(code(&o), 0);
        read(&file)
    };
    let first = cls("cls-a.tsv");
    assert_eq!(first, cls("cls-b.tsv"));
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.split('\t').count() == 1 + 64));

    let att = sgformer(&["export", "--attention", "--layer", "all", "--checkpoint", path(&ck), "--data", "synthetic-regression:2"]);
    assert_eq!(code(&att), 0);
    let docs: Vec<serde_json::Value> = stdout(&att).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(docs.len(), 2);
    let layers = docs[0]["layers"].as_array().unwrap();
    assert!(!layers.is_empty());
    for l in layers {
        assert_eq!(l["heads"].as_array().unwrap().len(), 4);
    }
    assert_eq!(code(&sgformer(&["export", "--attention", "--layer", "99", "--checkpoint", path(&ck), "--data", "synthetic-regression:2"])), 2);
}
