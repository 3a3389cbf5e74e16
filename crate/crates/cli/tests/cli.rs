use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphsim::ply::{save_ply, PlyFormat};
use graphsim::PointCloud;
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn cloud(n: usize, seed: u64, colored: bool) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Point3<f64>> = (0..n)
        .map(|_| Point3::new(rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0))
        .collect();
    let c = PointCloud::new(pts.clone()).unwrap();
    if !colored {
        return c;
    }
    let cols = pts
        .iter()
        .map(|p| [(p.x * 5.0) as u8, (p.y * 4.0) as u8, rng.random::<u8>()])
        .collect();
    c.with_colors(cols).unwrap()
}

fn write(dir: &Path, name: &str, c: &PointCloud) -> String {
    let path = dir.join(name);
    save_ply(c, &path, PlyFormat::BinaryLittleEndian).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a diagnostic");
    serde_json::from_str(line).expect("stderr is line-delimited JSON")
}

#[test]
fn identical_clouds_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(3000, 1, true));
    let v = json(&ok(&["score", &r, &r]));
    assert_eq!(v["scores"]["graphsim"], 1.0);
    assert_eq!(v["graphsim"]["q"], 1.0);
    assert!(v["graphsim"]["graphs"].as_array().unwrap().len() >= 1);
}

#[test]
fn seeded_score_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(3000, 2, true));
    let d = s(&dir.path().join("d.ply"));
    ok(&["distort", &r, "--kind", "cn", "--level", "0.1", "--seed", "4", "-o", &d]);
    let a = ok(&["score", &r, &d, "--seed", "7"]);
    let b = ok(&["score", &r, &d, "--seed", "7"]);
    assert_eq!(a, b);
}

#[test]
fn color_spaces_stay_in_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(3000, 3, true));
    let d = s(&dir.path().join("d.ply"));
    ok(&["distort", &r, "--kind", "cn", "--preset", "4", "-o", &d]);
    for space in ["gcm", "yuv", "rgb"] {
        let q = json(&ok(&["score", &r, &d, "--color-space", space]))["scores"]["graphsim"]
            .as_f64()
            .unwrap();
        assert!((0.0..=1.0).contains(&q), "{space}: {q}");
        assert!(q < 1.0);
    }
}

#[test]
fn multi_seed_reports_mean() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(3000, 4, true));
    let d = s(&dir.path().join("d.ply"));
    ok(&["distort", &r, "--kind", "ggn", "--level", "0.01", "-o", &d]);
    let v = json(&ok(&["score", &r, &d, "--seeds", "3", "--signal", "mixed", "--pooling", "c4"]));
    let per: Vec<f64> = v["seeds"]["per_seed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["q"].as_f64().unwrap())
        .collect();
    assert_eq!(per.len(), 3);
    let mean = per.iter().sum::<f64>() / 3.0;
    assert!((v["scores"]["graphsim"].as_f64().unwrap() - mean).abs() < 1e-15);
}

#[test]
fn ggn_level_zero_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(500, 5, true));
    let d = s(&dir.path().join("d.ply"));
    ok(&["distort", &r, "--kind", "ggn", "--level", "0", "-o", &d]);
    assert_eq!(fs::read(&r).unwrap(), fs::read(&d).unwrap());
    let manifest = json(&fs::read(dir.path().join("d.json")).unwrap());
    assert_eq!(manifest["points_out"], 500);
}

#[test]
fn resample_keeps_floor_of_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(729_133, 6, false));
    let csv = String::from_utf8(ok(&["resample", &r, "--beta-ratio", "0.001", "--resample", "random"])).unwrap();
    assert_eq!(csv.lines().count(), 1 + 729);
    assert_eq!(csv.lines().next().unwrap(), "index,score,x,y,z");
}

#[test]
fn identical_psnr_yuv_is_inf() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(800, 7, true));
    let v = json(&ok(&["baseline", &r, &r, "--metric", "psnr-yuv"]));
    assert_eq!(v["scores"]["psnr-yuv"], "inf");
    let all = json(&ok(&["baseline", &r, &r]));
    assert_eq!(all["scores"].as_object().unwrap().len(), 5);
}

#[test]
fn exit_codes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let colorless = write(dir.path(), "g.ply", &cloud(500, 8, false));
    let missing = s(&dir.path().join("nope.ply"));
    let out = run(&["score", &missing, &colorless]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["kind"], "io");
    assert!(out.stdout.is_empty());

    let out = run(&["score", &colorless, &colorless]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["level"], "error");

    assert_eq!(run(&["score", &colorless, &colorless, "--signal", "coord"]).status.code(), Some(0));

    let bad = dir.path().join("bad.ply");
    fs::write(&bad, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").unwrap();
    let out = run(&["baseline", &s(&bad), &colorless]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["distort", &colorless, "--kind", "ds", "--level", "1.5", "-o", &s(&dir.path().join("x.ply"))]);
    assert_eq!(out.status.code(), Some(3));
}

/// Three synthetic metrics over 4 contents × 6 distortions.
fn eval_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let scores = dir.join("scores");
    fs::create_dir_all(&scores).unwrap();
    let mut mos = String::from("content,distortion,mos\n");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for c in ["a", "b", "c", "d"] {
        for (k, fam) in ["cn", "ds"].iter().enumerate() {
            for l in 1..=3 {
                let m = 5.0 - 1.1 * l as f64 - 0.3 * k as f64 + rng.random::<f64>() * 0.2;
                mos.push_str(&format!("{c},{fam}{l},{m}\n"));
                let report = serde_json::json!({
                    "scores": {
                        "perfect": m,
                        "noisy": m + rng.random::<f64>(),
                        "shuffled": rng.random::<f64>(),
                    }
                });
                fs::write(scores.join(format!("{c}__{fam}{l}.json")), report.to_string()).unwrap();
            }
        }
    }
    let mos_path = dir.join("mos.csv");
    fs::write(&mos_path, mos).unwrap();
    (scores, mos_path)
}

#[test]
fn eval_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (scores, mos) = eval_fixture(dir.path());
    let table = String::from_utf8(ok(&["eval", &s(&scores), &s(&mos)])).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 3, "{table}");
    let v = json(&ok(&["eval", &s(&scores), &s(&mos), "--format", "json", "--fit", "per-group"]));
    let perfect = &v["metrics"]["perfect"]["overall"];
    assert!((perfect["plcc"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((perfect["srocc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["metrics"]["perfect"]["overall"]["n"], 24);
    assert!(v["metrics"]["noisy"]["by_distortion"]["cn"].is_object());
}

#[test]
fn eval_missing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (scores, mos) = eval_fixture(dir.path());
    fs::remove_file(scores.join("b__ds2.json")).unwrap();
    let out = run(&["eval", &s(&scores), &s(&mos)]);
    assert_eq!(out.status.code(), Some(3));
    let msg = error_line(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("b/ds2"), "{msg}");
    let v = json(&ok(&["eval", &s(&scores), &s(&mos), "--allow-partial", "--format", "json"]));
    assert_eq!(v["metrics"]["perfect"]["overall"]["n"], 23);
    assert_eq!(v["missing"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_reads_score_command_reports() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.ply", &cloud(2000, 10, true));
    let scores = dir.path().join("scores");
    fs::create_dir_all(&scores).unwrap();
    let mut mos = String::from("content,distortion,mos\n");
    for (i, level) in ["0.02", "0.06", "0.1", "0.15", "0.2", "0.3"].iter().enumerate() {
        let d = s(&dir.path().join(format!("d{i}.ply")));
        ok(&["distort", &r, "--kind", "cn", "--level", level, "-o", &d]);
        let label = format!("cn{i}");
        ok(&[
            "score", &r, &d, "--beta", "50", "--content", "blob", "--distortion", &label, "-o",
            &s(&scores.join(format!("g{i}.json"))),
        ]);
        ok(&["baseline", &r, &d, "--metric", "psnr-yuv", "-o", &s(&scores.join(format!("blob__{label}.json")))]);
        mos.push_str(&format!("blob,{label},{}\n", 5.0 - 0.7 * i as f64));
    }
    fs::write(dir.path().join("mos.csv"), mos).unwrap();
    let v = json(&ok(&["eval", &s(&scores), &s(&dir.path().join("mos.csv")), "--format", "json"]));
    for metric in ["graphsim", "psnr-yuv"] {
        let srocc = v["metrics"][metric]["overall"]["srocc"].as_f64().unwrap();
        assert!((srocc - 1.0).abs() < 1e-12, "{metric}: {srocc}");
    }
}
