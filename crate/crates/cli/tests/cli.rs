use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MINIMAL: &str = r#"
seed = 4

[dataset.generator]
kind = "sin-normal"
n = 600

[model]
family = "umonde"
x_hidden = [8]
mono_hidden = [8]

[training]
max_epochs = 5
"#;

const MIXTURE: &str = r#"
seed = 3

[dataset.generator]
kind = "mixture-process"
n = 1500

[model]
family = "pumonde"
hx_hidden = [8]
hxy_hidden = [6]
t_hidden = [6]

[training]
max_epochs = 10

[eval]
metrics = ["test-ll", "tail-classify", "tail-dep", "mi", "pairwise-ll"]
q = [0.95, 0.9]
pairs = [[0, 1]]
quad_n = 48
condition = [-2.0, -3.0]
permutations = 20
"#;

fn monde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monde")).args(args).output().unwrap()
}

fn copula(text: &str) -> String {
    text.replace(
        "family = \"pumonde\"\nhx_hidden = [8]\nhxy_hidden = [6]\nt_hidden = [6]",
        "family = \"copula-const\"\nwidth = 8",
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    monde(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn training_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = run("train", &cfg, dir, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = files(&a);
    for f in ["history.csv", "manifest.json", "metrics.json", "model.monde"] {
        assert!(names.contains(&f.to_string()), "{names:?}");
    }
    assert_eq!(names, files(&b));
    for f in &names {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["command"], "train");
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run("train", &cfg, &a, &[]).status.success());
    assert!(run("train", &cfg, &b, &["--seed", "5"]).status.success());
    assert_ne!(fs::read(a.join("model.monde")).unwrap(), fs::read(b.join("model.monde")).unwrap());
    assert_eq!(json(&b.join("manifest.json"))["seed"], 5);
}

#[test]
fn unknown_family_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &MINIMAL.replace("\"umonde\"", "\"rnade\""));
    let o = run("train", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("model.family") && err.contains("rnade"), "{err}");
}

#[test]
fn schema_violation_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &MINIMAL.replace("max_epochs = 5", "max_epochs = \"five\""));
    let o = run("train", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("training.max_epochs"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("train", &tmp.path().join("absent.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_reproduces_training_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mix.toml", MIXTURE);
    let trained = tmp.path().join("train");
    let o = run("train", &cfg, &trained, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["roc_q950.csv", "pr_q900.csv", "taildep_empirical_0_1.csv", "mi.csv", "pairwise_wins.csv"] {
        assert!(trained.join(f).exists(), "missing {f}: {:?}", files(&trained));
    }
    let model = trained.join("model.monde");
    let evaluated = tmp.path().join("eval");
    let o = run("eval", &cfg, &evaluated, &["--model", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (json(&trained.join("metrics.json")), json(&evaluated.join("metrics.json")));
    let ll = |v: &Value| v["log_likelihood"]["mean"].as_f64().unwrap();
    assert!((ll(&a) - ll(&b)).abs() <= 1e-12);
    assert_eq!(a, b);
}

#[test]
fn single_metric_subcommands_write_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    let text = copula(MIXTURE).replace("permutations = 20", "permutations = 20\nu_grid = [0.2, 0.8]")
        .replace("max_epochs = 10", "max_epochs = 80");
    let cfg = write_config(tmp.path(), "mix.toml", &text);
    let trained = tmp.path().join("train");
    assert!(run("train", &cfg, &trained, &[]).status.success());
    let model = trained.join("model.monde");
    for (sub, file) in [("tail-classify", "roc_q950.csv"), ("tail-dep", "taildep_model_0_1.csv"), ("mi", "mi.csv")] {
        let out = tmp.path().join(sub);
        let o = run(sub, &cfg, &out, &["--model", model.to_str().unwrap()]);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
        assert!(out.join(file).exists(), "{sub}: {:?}", files(&out));
    }
    let out = tmp.path().join("generate");
    assert!(run("generate", &cfg, &out, &[]).status.success());
    let csv = fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x0,x1,y0,y1,y2,group"));
    assert_eq!(csv.lines().count(), 1501);
}

#[test]
fn corrupt_and_foreign_models_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mix = write_config(tmp.path(), "mix.toml", MIXTURE);
    let trained = tmp.path().join("train");
    assert!(run("train", &mix, &trained, &[]).status.success());
    let bytes = fs::read(trained.join("model.monde")).unwrap();
    let truncated = tmp.path().join("truncated.monde");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let o = run("eval", &mix, &tmp.path().join("e1"), &["--model", truncated.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));

    let other = write_config(tmp.path(), "copula.toml", &copula(MIXTURE));
    let model = trained.join("model.monde");
    let o = run("eval", &other, &tmp.path().join("e2"), &["--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pumonde"), "{}", stderr(&o));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            monde_cli::ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
