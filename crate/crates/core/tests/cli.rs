use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parmor::eval::Curve;
use parmor::moment_basis::WeightMatrix;
use parmor::moment_series::MomentSeries;
use parmor::nonlinear::NonlinearRom;
use parmor::psys::ParametricLTI;
use parmor::rom::ReducedModel;

fn parmor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parmor")).args(args).env("PARMOR_THREADS", "2").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SERIES: &str = r#"{
  "name": "small",
  "system": {"kind": "benchmark", "k": 5},
  "generator": {"count": 3},
  "reduction": {"orders": [1, 2]},
  "verification": {"grid": 10, "moment_matching": [0.55]},
  "evaluation": {"p_grid": 20, "h2_params": [0.55], "freq_grid": {"lo": 0.1, "hi": 1e4, "points": 200}, "bode_params": [0.5], "bode_points": 50}
}"#;

#[test]
fn run_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "c.json");
    fs::write(&cfg, SMALL_SERIES).unwrap();
    let out = parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), "runs"))]);
    ok(&out);
    let run = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    for f in ["config.json", "series.json", "rom.json", "moment_error.csv", "verification.json", "h2.csv", "bode.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["nu"], 6);
    assert_eq!(summary["metrics"]["stability_pass"], true);
    assert!(summary["metrics"]["moment_error_at_center"].as_f64().unwrap() <= 1e-8);
    assert_eq!(summary["metrics"]["moment_matching"][0]["pass"], true);
    let curve = Curve::read(&fs::read_to_string(run.join("moment_error.csv")).unwrap()).unwrap();
    assert_eq!(curve.x.len(), 20);
    assert_eq!(curve.columns, vec!["N=1".to_string(), "N=2".to_string()]);
    // second run refuses to overwrite, --force reruns
    let again = parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), "runs"))]);
    assert_eq!(again.status.code(), Some(1));
    ok(&parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), "runs")), "--force"]));
}

#[test]
fn reruns_give_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "c.json");
    fs::write(&cfg, SMALL_SERIES).unwrap();
    let mut texts = Vec::new();
    for sub in ["a", "b"] {
        let out = parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), sub))]);
        ok(&out);
        let run = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
        texts.push(fs::read(run.join("summary.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn data_and_nonlinear_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "d.json");
    fs::write(
        &cfg,
        r#"{"name": "d", "system": {"k": 5}, "generator": {"count": 3, "hi_exp": 1.5},
            "reduction": {"method": "data", "basis_order": 3}, "data": {"k": 5},
            "verification": {"grid": 10, "moment_matching": []},
            "evaluation": {"p_grid": 20, "h2_params": [0.5], "freq_grid": {"lo": 0.1, "hi": 1e4, "points": 200}, "bode_params": []}}"#,
    )
    .unwrap();
    let out = parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), "runs"))]);
    ok(&out);
    let run = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert!(run.join("dataset/metadata.json").exists());
    assert!(run.join("weights.json").exists());
    let rom = ReducedModel::from_json(&fs::read_to_string(run.join("rom.json")).unwrap()).unwrap();
    assert_eq!(rom.nu(), 6);

    let cfg = p(dir.path(), "n.json");
    fs::write(&cfg, r#"{"name": "n", "reduction": {"method": "nl", "rbf": 20}, "data": {"k": 5, "window": [60.0, 80.0], "h": 100, "t_end": 80.0}}"#)
        .unwrap();
    let out = parmor(&["run", s(&cfg), "--out", s(&p(dir.path(), "runs"))]);
    ok(&out);
    let run = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert!(summary["metrics"]["heldout_nrms_max"].as_f64().unwrap().is_finite());
    let rom: NonlinearRom = serde_json::from_str(&fs::read_to_string(run.join("nl_rom.json")).unwrap()).unwrap();
    assert_eq!(rom.weights.theta.len(), 20);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.json");
    fs::write(&cfg, r#"{"data": {"h": -3}}"#).unwrap();
    let out = parmor(&["run", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.h"));

    let cfg = p(dir.path(), "overlap.json");
    fs::write(&cfg, r#"{"system": {"k": 5}, "generator": {"count": 3}, "reduction": {"gain": {"kind": "constant", "g": [0, 0, 0, 0, 0, 0]}}}"#)
        .unwrap();
    let out = parmor(&["run", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = parmor(&["run", s(&p(dir.path(), "missing.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subcommands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bench = p(d, "bench.json");
    ok(&parmor(&["bench", "gen", "--k", "4", "-o", s(&bench)]));
    let sys = ParametricLTI::from_json(&fs::read_to_string(&bench).unwrap()).unwrap();
    assert_eq!(sys.n, 8);

    let traj = p(d, "traj.csv");
    ok(&parmor(&["simulate", "--system", s(&bench), "--p", "0.55", "--t-end", "2", "--dt", "1e-3", "--count", "2", "--record-stride", "100", "-o", s(&traj)]));
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t,x1,"));
    assert_eq!(text.lines().count(), 1 + 21);

    let series = p(d, "series.json");
    let rom = p(d, "rom.json");
    ok(&parmor(&["reduce", "series", "--system", s(&bench), "--order", "4", "--center", "0.55", "--count", "2", "-o", s(&series), "--rom", s(&rom)]));
    let ms = MomentSeries::from_json(&fs::read_to_string(&series).unwrap()).unwrap();
    assert_eq!(ms.order(), 4);
    let original = ReducedModel::from_json(&fs::read_to_string(&rom).unwrap()).unwrap();
    let reread = ReducedModel::from_json(&original.to_json().unwrap()).unwrap();
    for p in [0.1, 0.37, 1.0] {
        let (a, b) = (original.eval(p).unwrap(), reread.eval(p).unwrap());
        assert!((&a.f - &b.f).amax() <= 1e-12 * a.f.amax().max(1.0));
        assert!((&a.g - &b.g).amax() <= 1e-12 * a.g.amax().max(1.0));
        assert!((&a.h - &b.h).amax() <= 1e-12 * a.h.amax().max(1.0));
    }

    let weights = p(d, "w.json");
    let brom = p(d, "brom.json");
    ok(&parmor(&["reduce", "basis", "--system", s(&bench), "--count", "2", "--k", "6", "--basis-order", "4", "-o", s(&weights), "--rom", s(&brom)]));
    let w: WeightMatrix = serde_json::from_str(&fs::read_to_string(&weights).unwrap()).unwrap();
    assert_eq!(w.nu(), 4);

    let dw = p(d, "dw.json");
    let ds = p(d, "ds");
    ok(&parmor(&["reduce", "data", "--system", s(&bench), "--count", "2", "--k", "6", "--basis-order", "4", "--dataset-out", s(&ds), "-o", s(&dw)]));
    let again = p(d, "dw2.json");
    ok(&parmor(&["reduce", "data", "--system", s(&bench), "--dataset", s(&ds), "--count", "2", "--basis-order", "4", "-o", s(&again)]));
    let a: WeightMatrix = serde_json::from_str(&fs::read_to_string(&dw).unwrap()).unwrap();
    let b: WeightMatrix = serde_json::from_str(&fs::read_to_string(&again).unwrap()).unwrap();
    assert!((&a.gamma - &b.gamma).amax() <= 1e-12 * a.gamma.amax());

    let report = p(d, "stab.json");
    ok(&parmor(&["verify", "--model", s(&rom), "--property", "stability", "--grid", "20", "-o", s(&report)]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["pass"], true);
    let mm = p(d, "mm.json");
    ok(&parmor(&["verify", "--model", s(&rom), "--property", "moment-matching", "--p", "0.55", "-o", s(&mm)]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mm).unwrap()).unwrap();
    assert_eq!(r["pass"], true);

    let curve = p(d, "l2.csv");
    ok(&parmor(&["eval", "--metric", "l2-moment", "--system", s(&bench), "--model", s(&series), "--grid", "30", "-o", s(&curve)]));
    let c = Curve::read(&fs::read_to_string(&curve).unwrap()).unwrap();
    assert_eq!(c.x.len(), 30);
    assert!(c.meta.iter().any(|(k, _)| k == "system_hash"));
    let h2 = p(d, "h2.csv");
    ok(&parmor(&["eval", "--metric", "h2", "--system", s(&bench), "--model", s(&rom), "--grid", "5", "--freq-points", "200", "-o", s(&h2)]));
    assert_eq!(Curve::read(&fs::read_to_string(&h2).unwrap()).unwrap().x.len(), 5);
    let bode = p(d, "bode.csv");
    ok(&parmor(&["eval", "--metric", "bode", "--system", s(&bench), "--model", s(&brom), "--grid", "40", "--p", "0.3", "-o", s(&bode)]));
    assert_eq!(Curve::read(&fs::read_to_string(&bode).unwrap()).unwrap().columns.len(), 2);

    let nl = p(d, "nl.json");
    ok(&parmor(&["bench", "gen", "--nl", "-o", s(&nl)]));
    let nrom = p(d, "nrom.json");
    ok(&parmor(&["reduce", "nl", "--system", s(&nl), "--rbf", "15", "--seed", "7", "--k", "5", "--window", "60", "80", "--h", "100", "-o", s(&nrom)]));
    let r: NonlinearRom = serde_json::from_str(&fs::read_to_string(&nrom).unwrap()).unwrap();
    let back: NonlinearRom = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    let w = [0.1, -0.2];
    assert!((r.weights.eval(&w, 1.0) - back.weights.eval(&w, 1.0)).abs() <= 1e-12);
    let ntraj = p(d, "ntraj.csv");
    ok(&parmor(&["simulate", "--system", s(&nl), "--p", "1.0", "--t-end", "5", "--dt", "1e-2", "--freqs", "0.6", "-o", s(&ntraj)]));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    for name in ["fig1_series.json", "fig1_basis.json", "nl_duffing.json"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        parmor::config::ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
