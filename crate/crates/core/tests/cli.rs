use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_berkson")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("study.toml");
    fs::write(
        &path,
        r#"
[model]
name = "example1"

[data]
gamma0 = [1.0, 1.0, 1.0, 0.25, 1.0]
n = 400
seed = 3

[bounds]
lower = [-2.0, 0.1, 0.1, 1e-3, 1e-3]
upper = [4.0, 3.0, 3.0, 2.0, 6.0]

[estimator]
multistart = 2

[study]
replications = 3
seed = 5
"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let csv = dir.path().join("data.csv");
    let o = run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("y,z1,z2\n"));
    assert_eq!(text.lines().count(), 401);

    let bounds = dir.path().join("bounds.toml");
    fs::write(&bounds, "lower = [-2.0, 0.1, 0.1, 1e-3, 1e-3]\nupper = [4.0, 3.0, 3.0, 2.0, 6.0]\n").unwrap();
    for est in ["mde", "mde2", "se"] {
        let out = dir.path().join(format!("{est}.json"));
        let o = run(&[
            "fit",
            "--data",
            csv.to_str().unwrap(),
            "--model",
            "example1",
            "--estimator",
            est,
            "--S",
            "20",
            "--bounds",
            bounds.to_str().unwrap(),
            "--multistart",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!([0, 5].contains(&code(&o)), "{est}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["gamma_hat"].as_array().unwrap().len(), 5);
        assert!(String::from_utf8_lossy(&o.stdout).contains("theta1"));
    }
}

#[test]
fn study_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["study", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("timing.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,z1,z2\n1,2,3\n1.5,abc,2\n").unwrap();
    let out = dir.path().join("o.json");
    let fit = |data: &Path, est: &str| {
        run(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "example1",
            "--estimator",
            est,
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let o = fit(&bad, "mde");
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert_eq!(code(&fit(&bad, "ols")), 2);
    let o = run(&["moments", "--model", "nope", "--gamma", "1", "--z", "0"]);
    assert_eq!(code(&o), 2);
    let o = run(&["study", "--config", dir.path().join("missing.toml").to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn moments_prints_three_methods() {
    let o = run(&["moments", "--model", "example1", "--gamma", "1,1,1,0.25,1", "--z", "0.3,-0.5", "--S", "20000"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    let row = |label: &str| -> Vec<f64> {
        s.lines()
            .find(|l| l.starts_with(label))
            .unwrap()
            .split_whitespace()
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let closed = row("closed");
    let quad = row("quadrature");
    let sim = row("simulated");
    assert!((closed[0] - 0.987_289_278_790_972_2).abs() < 1e-9);
    assert!((closed[0] - quad[0]).abs() < 1e-8 && (closed[1] - quad[1]).abs() < 1e-7);
    assert!((closed[0] - sim[0]).abs() < 0.05);
}
