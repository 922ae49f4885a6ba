use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgeq"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn small(block: &str, body: Value) -> Value {
    let mut v = json!({"grid": {"n1": 1, "n2": 64}});
    v[block] = body;
    v
}

#[test]
fn microcanonical_run_writes_artifacts_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.json",
        &small(
            "solve_microcanonical",
            json!({"energy": 0.05, "circulation": -0.5}),
        ),
    );
    let out = tmp.path().join("a");
    let o = run("solve-microcanonical", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let state: Value =
        serde_json::from_str(&fs::read_to_string(out.join("state.json")).unwrap()).unwrap();
    assert_eq!(state["status"], "converged");
    assert!((state["circulation"].as_f64().unwrap() + 0.5).abs() < 1e-8);
    for (name, header) in [
        ("velocity.csv", "x2,v1"),
        ("field.csv", "x1,x2,q,psi"),
        (
            "history.csv",
            "iteration,phase,information,energy,circulation,beta,gamma",
        ),
    ] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(text.lines().next(), Some(header));
    }
    assert_eq!(
        fs::read_to_string(out.join("velocity.csv"))
            .unwrap()
            .lines()
            .count(),
        65
    );

    let m = manifest(&out);
    assert_eq!(m["manifest_version"], 1);
    assert_eq!(m["command"], "solve-microcanonical");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config"]["grid"]["n2"], 64);
    assert_eq!(m["config"]["prior"]["epsilon"], 0.1);
    assert!(Path::new(m["config"]["output_dir"].as_str().unwrap()).is_absolute());
    assert!(m["timings"]["total_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.json",
        &small(
            "solve_microcanonical",
            json!({"energy": 0.03, "circulation": 0.4}),
        ),
    );
    let first = tmp.path().join("first");
    assert_eq!(
        run("solve-microcanonical", &cfg, &first, &[]).status.code(),
        Some(0)
    );
    let second = tmp.path().join("second");
    let o = run(
        "solve-microcanonical",
        &first.join("manifest.json"),
        &second,
        &["--jobs", "2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["field.csv", "velocity.csv", "history.csv", "state.json"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }

    let o = run(
        "sweep",
        &first.join("manifest.json"),
        &tmp.path().join("x"),
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest was written by `solve-microcanonical`"));
}

#[test]
fn config_errors_exit_with_field_path() {
    let tmp = TempDir::new().unwrap();
    let both = write_config(
        tmp.path(),
        "both.json",
        &json!({"solve_canonical": {"beta": 1.0, "gamma": 0.0},
                "solve_microcanonical": {"energy": 0.05, "circulation": 0.0}}),
    );
    let o = run("solve-canonical", &both, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("found solve_canonical, solve_microcanonical"),
        "{}",
        stderr(&o)
    );

    let mixed = write_config(
        tmp.path(),
        "mixed.json",
        &json!({"solve_microcanonical": {"energy": 0.05, "circulation": 0.0, "beta": 1.0}}),
    );
    let o = run("solve-microcanonical", &mixed, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("solve_microcanonical.beta"),
        "{}",
        stderr(&o)
    );

    let bad_grid = write_config(
        tmp.path(),
        "grid.json",
        &json!({"grid": {"n2": 0}, "solve_microcanonical": {"energy": 0.05, "circulation": 0.0}}),
    );
    assert_eq!(
        run(
            "solve-microcanonical",
            &bad_grid,
            &tmp.path().join("o"),
            &[]
        )
        .status
        .code(),
        Some(1)
    );

    let missing = tmp.path().join("nope.json");
    assert_eq!(
        run("sweep", &missing, &tmp.path().join("o"), &[])
            .status
            .code(),
        Some(1)
    );

    let ok = write_config(
        tmp.path(),
        "ok.json",
        &small("solve_canonical", json!({"beta": 1.0, "gamma": 0.0})),
    );
    let o = run(
        "solve-canonical",
        &ok,
        &tmp.path().join("o"),
        &["--jobs", "0"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn exit_codes_distinguish_infeasible_and_nonconvergence() {
    let tmp = TempDir::new().unwrap();
    let infeasible = write_config(
        tmp.path(),
        "i.json",
        &small(
            "solve_microcanonical",
            json!({"energy": 0.001, "circulation": 2.0}),
        ),
    );
    let out = tmp.path().join("i");
    assert_eq!(
        run("solve-microcanonical", &infeasible, &out, &[])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(manifest(&out)["exit_code"], 3);

    let mut capped = small(
        "solve_microcanonical",
        json!({"energy": 0.05, "circulation": -0.5}),
    );
    capped["solver"] = json!({"max_outer_iters": 2});
    let capped = write_config(tmp.path(), "n.json", &capped);
    let out = tmp.path().join("n");
    assert_eq!(
        run("solve-microcanonical", &capped, &out, &[])
            .status
            .code(),
        Some(2)
    );
    assert!(out.join("state.json").exists());

    let unbounded = write_config(
        tmp.path(),
        "u.json",
        &small("solve_canonical", json!({"beta": -1000.0, "gamma": 0.5})),
    );
    assert_eq!(
        run("solve-canonical", &unbounded, &tmp.path().join("u"), &[])
            .status
            .code(),
        Some(2)
    );

    let stab = write_config(
        tmp.path(),
        "s.json",
        &small("stability", json!({"points": [[0.05, -0.5], [0.001, 2.0]]})),
    );
    let out = tmp.path().join("s");
    assert_eq!(run("stability", &stab, &out, &[]).status.code(), Some(3));
    let text = fs::read_to_string(out.join("stability.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[1].starts_with("0.05,-0.5,ok,1,64,"));
    assert!(rows[2].starts_with("0.001,2.0,infeasible,,"));
}

#[test]
fn sweep_classify_and_plot_pipeline() {
    let tmp = TempDir::new().unwrap();
    let sweep = write_config(
        tmp.path(),
        "sweep.json",
        &small(
            "sweep",
            json!({"energy": {"min": 0.0, "max": 0.06, "step": 0.01, "include_min": false},
                   "circulation": {"min": -1.0, "max": 1.0, "step": 0.25}}),
        ),
    );
    let out = tmp.path().join("sweep");
    let o = run("sweep", &sweep, &out, &["--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let surface = out.join("surface.csv");
    let text = fs::read_to_string(&surface).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("E,Gamma,admissible,converged,S,beta,gamma,label,witness_E,witness_Gamma")
    );
    assert_eq!(text.lines().count(), 1 + 6 * 9);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cross_checked"], summary["full"]);

    let classify = write_config(
        tmp.path(),
        "classify.json",
        &json!({"classify": {"surface": "sweep/surface.csv", "points": [[0.05, -0.5]]}}),
    );
    let cl = tmp.path().join("classify");
    let o = run("classify", &classify, &cl, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = fs::read_to_string(cl.join("classification.csv")).unwrap();
    assert!(
        rows.lines()
            .nth(1)
            .unwrap()
            .starts_with("0.05,-0.5,nonequivalent,"),
        "{rows}"
    );

    let off_grid = write_config(
        tmp.path(),
        "off.json",
        &json!({"classify": {"surface": "sweep/surface.csv", "points": [[0.055, -0.5]]}}),
    );
    assert_eq!(
        run("classify", &off_grid, &tmp.path().join("off"), &[])
            .status
            .code(),
        Some(1)
    );

    let plots = tmp.path().join("plots");
    for (name, block) in [
        (
            "map.json",
            json!({"kind": "surface", "inputs": ["sweep/surface.csv"]}),
        ),
        (
            "sec.json",
            json!({"kind": "section", "inputs": ["sweep/surface.csv"], "energy": 0.05}),
        ),
    ] {
        let cfg = write_config(tmp.path(), name, &json!({"plot": block}));
        let o = run("plot", &cfg, &plots, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let map = fs::read_to_string(plots.join("surface_map.svg")).unwrap();
    assert!(map.starts_with("<svg") && map.contains("nonequivalent"));
    assert!(plots.join("surface_section_e_0.05.svg").exists());

    let again = tmp.path().join("plots2");
    let cfg = tmp.path().join("map.json");
    assert_eq!(run("plot", &cfg, &again, &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(plots.join("surface_map.svg")).unwrap(),
        fs::read(again.join("surface_map.svg")).unwrap()
    );
}

#[test]
fn plot_rejects_empty_and_mismatched_inputs() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    fs::write(tmp.path().join("wrong.csv"), "a,b\n1,2\n").unwrap();
    fs::write(tmp.path().join("header_only.csv"), "x2,v1\n").unwrap();
    for (input, kind, needle) in [
        ("empty.csv", "surface", "is empty"),
        ("wrong.csv", "velocity", "schema mismatch"),
        ("header_only.csv", "velocity", "no data rows"),
    ] {
        let cfg = write_config(
            tmp.path(),
            "p.json",
            &json!({"plot": {"kind": kind, "inputs": [input]}}),
        );
        let out = tmp.path().join(format!("out_{input}"));
        let o = run("plot", &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
        let svgs = fs::read_dir(&out)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "svg")
            })
            .count();
        assert_eq!(svgs, 0);
    }
    let cfg = write_config(
        tmp.path(),
        "both.json",
        &json!({"plot": {"kind": "section", "inputs": ["empty.csv"], "energy": 0.05, "circulation": 0.0}}),
    );
    assert_eq!(
        run("plot", &cfg, &tmp.path().join("o"), &[]).status.code(),
        Some(1)
    );
}

#[test]
fn mc_ldp_seed_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "mc.json",
        &json!({"prior": {"kind": "gaussian"},
                "mc_ldp": {"target": 0.5, "n_schedule": [64, 256], "trials": 2000}}),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(
        run("mc-ldp", &cfg, &a, &["--seed", "1"]).status.code(),
        Some(0)
    );
    assert_eq!(
        run("mc-ldp", &cfg, &b, &["--seed", "1", "--jobs", "3"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run("mc-ldp", &cfg, &c, &["--seed", "2"]).status.code(),
        Some(0)
    );
    let read = |d: &Path| fs::read_to_string(d.join("mc.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(
        read(&a).lines().next(),
        Some("n,hits,trials,rate,ci_low,ci_high,target")
    );
    assert_eq!(manifest(&a)["config"]["seed"], 1);
}

#[test]
fn tabulated_prior_and_topography_files() {
    let tmp = TempDir::new().unwrap();
    let mut prior = String::from("y,density\n");
    for k in 0..=160 {
        let y = -8.0 + 0.1 * k as f64;
        prior.push_str(&format!(
            "{y},{}\n",
            (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt()
        ));
    }
    fs::write(tmp.path().join("prior.csv"), prior).unwrap();
    let (n1, n2) = (4, 8);
    let mut topo = String::from("x1,x2,b\n");
    for j in 0..n2 {
        for i in 0..n1 {
            let (x1, x2) = (
                -0.5 + (i as f64 + 0.5) / n1 as f64,
                -0.5 + (j as f64 + 0.5) / n2 as f64,
            );
            let b = (2.0 * std::f64::consts::PI * x2).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * x1).cos();
            topo.push_str(&format!("{x1},{x2},{b}\n"));
        }
    }
    fs::write(tmp.path().join("topo.csv"), topo).unwrap();
    let cfg = write_config(
        tmp.path(),
        "t.json",
        &json!({
            "grid": {"n1": n1, "n2": n2},
            "prior": {"kind": "tabulated", "path": "prior.csv"},
            "topography": {"kind": "file", "path": "topo.csv"},
            "solve_canonical": {"beta": 5.0, "gamma": 0.1}
        }),
    );
    let out = tmp.path().join("t");
    let o = run("solve-canonical", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    assert!(Path::new(m["config"]["prior"]["path"].as_str().unwrap()).is_absolute());
    assert_eq!(
        fs::read_to_string(out.join("field.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + n1 * n2
    );

    let cfg = write_config(
        tmp.path(),
        "wrong.json",
        &json!({
            "grid": {"n1": 8, "n2": 8},
            "topography": {"kind": "file", "path": "topo.csv"},
            "solve_canonical": {"beta": 5.0, "gamma": 0.1}
        }),
    );
    let o = run("solve-canonical", &cfg, &tmp.path().join("w"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("32 rows for a grid of 64 cells"),
        "{}",
        stderr(&o)
    );
}
