use std::path::Path;
use std::process::{Command, Output};

use fuelage::age::AgeCoeffModel;
use fuelage::ingest::parse_qar_csv;

fn fuelage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuelage"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fuelage(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_fleet(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen", "--out-dir", p(dir), "--n-tails", "3", "--flights-per-tail", "4"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn calibration_recovers_noiseless_planted_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_fleet(d, &["--noise-sd", "0", "--tail-bias-sd", "0", "--a-true", "0.0231"]);
    let fleet = d.join("fleet.csv");
    ok(&["baseline", "--out-dir", p(d), "--input", p(&fleet)]);
    let pred = d.join("baseline_pred.csv");
    let stdout = ok(&["calibrate", "--out-dir", p(d), "--obs", p(&fleet), "--pred", p(&pred)]);
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("a = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let saved = AgeCoeffModel::load(&d.join("age_coeff.txt")).unwrap();
    assert!((saved.a - 0.0231).abs() < 1e-6, "a = {}", saved.a);
    assert!((printed - saved.a).abs() < 1e-9);
    assert!(stdout.contains("seymour"));
}

#[test]
fn perfect_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_fleet(d, &[]);
    ok(&["prep", "--out-dir", p(d), "--input", p(&d.join("fleet.csv"))]);
    let test = d.join("test.csv");
    let ds = parse_qar_csv(&test).unwrap().dataset;
    let mut text = String::from("tail_id,flight_id,t_s,pred_kgh\n");
    for s in &ds.samples {
        text.push_str(&format!("{},{},{},{}\n", s.tail_id, s.flight_id, s.t, s.fuel_flow.unwrap()));
    }
    let pred = d.join("truth_pred.csv");
    std::fs::write(&pred, text).unwrap();
    let model = format!("perfect=pred:{}", p(&pred));
    ok(&["eval", "--out-dir", p(d), "--input", p(&test), "--model", &model]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval_perfect.json")).unwrap()).unwrap();
    let overall = &report["overall"];
    for key in ["mae", "me", "mse", "bias_ratio", "mape"] {
        assert_eq!(overall[key].as_f64(), Some(0.0), "{key}");
    }
    assert_eq!(report["diff"].as_f64(), Some(0.0));
    let consumption = std::fs::read_to_string(d.join("consumption.csv")).unwrap();
    assert_eq!(consumption.lines().count(), 3);
}

#[test]
fn projection_of_reference_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let coeff = d.join("ref.txt");
    AgeCoeffModel::new(0.0231).save(&coeff).unwrap();
    let model = format!("same=coeff:{},baseline", p(&coeff));
    ok(&["project", "--out-dir", p(d), "--model", &model]);
    let csv = std::fs::read_to_string(d.join("projection.csv")).unwrap();
    let mut same = 0;
    let mut blind = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let diff: f64 = f[4].parse().unwrap();
        match f[1] {
            "same" => {
                assert_eq!(diff, 0.0);
                same += 1;
            }
            "baseline" => blind.push(diff),
            other => panic!("unexpected model {other}"),
        }
    }
    assert_eq!(same, 15);
    assert!(blind.windows(2).all(|w| w[1] > w[0]) && blind[0] > 0.0);
    assert!(d.join("projection.svg").exists());
}

#[test]
fn generation_is_reproducible_and_manifest_replays() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_fleet(a.path(), &["--seed", "5"]);
    let manifest = a.path().join("manifest_gen.txt");
    ok(&["gen", "--config", p(&manifest), "--out-dir", p(b.path())]);
    let fa = std::fs::read(a.path().join("fleet.csv")).unwrap();
    let fb = std::fs::read(b.path().join("fleet.csv")).unwrap();
    assert_eq!(fa, fb);
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("seed = 5"));
    assert!(text.contains("command = gen"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(fuelage(&["gen", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(fuelage(&["gen", "--out-dir", p(d), "--n-tails", "0"]).status.code(), Some(2));
    let missing = d.join("missing.csv");
    assert_eq!(
        fuelage(&["baseline", "--out-dir", p(d), "--input", p(&missing)]).status.code(),
        Some(3)
    );
    small_fleet(d, &[]);
    let fleet = d.join("fleet.csv");
    assert_eq!(
        fuelage(&["prep", "--out-dir", p(d), "--input", p(&fleet), "--window-len", "4"]).status.code(),
        Some(2)
    );
    assert_eq!(
        fuelage(&["eval", "--out-dir", p(d), "--input", p(&fleet), "--model", "nonsense"]).status.code(),
        Some(2)
    );
    assert_eq!(fuelage(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_coefficients_match_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/physics_coeffs.txt");
    let shipped = fuelage::physics::ParametricCoeffs::load(&path).unwrap();
    assert_eq!(shipped, fuelage::physics::ParametricCoeffs::default());
}
