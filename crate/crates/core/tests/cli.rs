use std::path::Path;
use std::process::{Command, Output};

fn qmetro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmetro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn curve_has_one_row_per_state_and_eta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.csv");
    let o = qmetro(&[
        "curve",
        "--states",
        "cat:alpha=3,ecs:alpha=3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let text = read(&out);
    assert!(text.starts_with("#schema=1\n"));
    assert!(text.contains("\neta,label,delta_phi,m,n_phi,a_opt\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 202);
    assert!(rows.iter().all(|r| r.len() == 6 && r[5].is_empty()));
    // sorted by label, then eta
    let labels: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert!(labels[..101].iter().all(|l| *l == "cat:alpha=3"));
    assert!(labels[101..].iter().all(|l| *l == "ecs:alpha=3"));
    let etas: Vec<f64> = rows[..101].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(etas.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(etas[100], 1.0);
}

#[test]
fn noon_single_point_to_stdout() {
    let o = qmetro(&["curve", "--states", "noon:N=4", "--eta", "1:1:1", "--rphi", "400"]);
    assert!(o.status.success());
    let rows = data_rows(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(rows.len(), 1);
    let d: f64 = rows[0][2].parse().unwrap();
    assert!((d - 1.0 / (4.0 * 200f64.sqrt())).abs() < 1e-12);
    assert_eq!(rows[0][2], "1.76776695297e-2");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = qmetro(&["fig3", "--eta", "0.2:1:5", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = data_rows(&read(&a));
    assert_eq!(rows.len(), 30);
    for label in ["CC", "NC", "NOON", "SNL", "UCS", "cat"] {
        assert_eq!(rows.iter().filter(|r| r[1] == label).count(), 5, "{label}");
    }
}

#[test]
fn bad_state_token_is_a_usage_error() {
    let o = qmetro(&["curve", "--states", "cat:alpha=3,squeezed:r=1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("squeezed"), "{err}");
    assert!(o.stdout.is_empty());

    let o = qmetro(&["curve", "--states", "cat:alpha=3", "--eta", "0:1:5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qmetro(&["fig2", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# preset\nstates = noon:N=4\neta = 1:1:1\nrphi = 100\n").unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["curve", "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = qmetro(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        data_rows(&text)[0][2].parse::<f64>().unwrap()
    };
    assert!((run(&[]) - 1.0 / (4.0 * 50f64.sqrt())).abs() < 1e-12);
    assert!((run(&["--rphi", "400"]) - 1.0 / (4.0 * 200f64.sqrt())).abs() < 1e-12);

    std::fs::write(&cfg, "rphi=100\nwidth=3\n").unwrap();
    let o = qmetro(&["fig2", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
}

#[test]
fn small_cutoff_exits_with_truncation() {
    let o = qmetro(&["curve", "--states", "cat:alpha=3", "--eta", "0.5:1:2", "--cutoff", "10"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cat:alpha=3") && err.contains("eta=0.5"), "{err}");
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("x.csv");
    let o = qmetro(&[
        "curve",
        "--states",
        "noon:N=2",
        "--eta",
        "1:1:1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn measure_is_seeded() {
    let args = [
        "measure",
        "--states",
        "cat:alpha=2",
        "--eta",
        "0.8:0.8:1",
        "--beta",
        "8",
        "--m",
        "500",
        "--trials",
        "4",
        "--seed",
        "11",
    ];
    let a = qmetro(&args);
    let b = qmetro(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("\ntrial,phi_true,mean_phi,std_phi,m\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let truth: f64 = r[1].parse().unwrap();
        let mean: f64 = r[2].parse().unwrap();
        let std: f64 = r[3].parse().unwrap();
        assert!((mean - truth).abs() < 6.0 * std, "{r:?}");
        assert_eq!(r[4], "500");
    }

    let mut other = args.to_vec();
    *other.last_mut().unwrap() = "12";
    assert_ne!(qmetro(&other).stdout, b.stdout);

    let o = qmetro(&["measure", "--states", "cat:alpha=2", "--m", "10"]);
    assert_eq!(o.status.code(), Some(2));
}
