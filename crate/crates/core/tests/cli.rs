use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use setot::config::load_config;
use setot::transport::io::read_binary;

const SMALL_GRUSHIN: &str = r#"
[scenario]
name = "grushin"

[grid]
dims = [10, 10]

[time]
tf = 1.0
k = 12

[mu0]
kind = "disk"
center = [0.0, 0.7]
radius = 0.25

[mu1]
kind = "delta"
point = [0.0, 0.0]

[solver]
tol = 1e-4
max_iters = 3000
prox_step = 2.0

[particles]
per_box = 1
"#;

fn setot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setot")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, m, k) in [
        ("grushin.toml", 10_000, 120),
        ("grushin_desk.toml", 2500, 60),
        ("double_gyre.toml", 450, 400),
        ("unicycle.toml", 15_625, 20),
    ] {
        let cfg = load_config(&root.join(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid().unwrap().len(), m, "{name}");
        assert_eq!(cfg.time_grid().unwrap().k, k, "{name}");
    }
}

#[test]
fn solve_writes_snapshots_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GRUSHIN);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1", "solve"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snaps = fs::read_dir(out.join("density")).unwrap().count();
    assert_eq!(snaps, 13);
    let first = fs::read_to_string(out.join("density/mu_0000.csv")).unwrap();
    assert!(first.starts_with("box,x1,x2,mass\n"));
    assert_eq!(first.lines().count(), 101);

    let cost = fs::read_to_string(out.join("cost.csv")).unwrap();
    let row: Vec<&str> = cost.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert!(row[1].parse::<f64>().unwrap() > 0.0);
    assert_eq!(row[4], "true");

    let bin = read_binary(fs::File::open(out.join("density.bin")).unwrap()).unwrap();
    assert_eq!((bin.m, bin.k, bin.dims.clone()), (100, 12, vec![10, 10]));
    for mu in &bin.density {
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-3);
    }

    let man = manifest(&out);
    assert_eq!(man["status"], "ok");
    assert_eq!(man["command"], "solve");
    assert!(man["results"]["diagnostics"]["iterations"].as_u64().unwrap() > 0);
    assert!(man["config"].as_str().unwrap().contains("grushin"));
}

#[test]
fn as_density_divides_by_box_volume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GRUSHIN);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "--max-iters", "50", "solve", "--as-density"]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("density/mu_0012.csv")).unwrap();
    assert!(text.starts_with("box,x1,x2,density\n"));
    // Delta target: the whole unit mass sits in one box of volume 0.04.
    let peak = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!((peak - 25.0).abs() < 1e-9);
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GRUSHIN);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1", "--max-iters", "400", "simulate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["density/mu_0003.csv", "flux.csv", "cost.csv", "feedback.csv", "trajectories.csv", "particles.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_reports_particles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GRUSHIN);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("particles.json")).unwrap()).unwrap();
    let f = p["transported_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    assert!(p["particles"].as_u64().unwrap() > 0);
    let fb = fs::read_to_string(out.join("feedback.csv")).unwrap();
    assert!(fb.lines().count() > 1);
    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(traj.lines().count() > 1);
}

#[test]
fn broken_system_fails_connectivity_with_components() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[scenario]
name = "constant"
controls = [[1.0, 0.0]]

[grid]
dims = [5, 3]

[time]
tf = 1.0
k = 4

[mu0]
kind = "boxes"
indices = [0]

[mu1]
kind = "boxes"
indices = [14]
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "check-connectivity"]);
    assert!(!o.status.success());
    let report = fs::read_to_string(out.join("connectivity.txt")).unwrap();
    assert!(report.contains("control_components: 3"), "{report}");
    assert!(report.contains("component_sizes: 5 5 5"), "{report}");
    assert!(report.contains("passed: false"));
    let err: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "hypotheses");
    assert_eq!(manifest(&out)["failed_stage"], "connectivity");

    // The solver refuses the same problem unless told otherwise.
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "solve"]);
    assert!(!o.status.success());
    assert_eq!(manifest(&out)["failed_stage"], "solve");
}

#[test]
fn bad_config_names_the_field_and_still_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL_GRUSHIN.replace("tol = 1e-4", "tol = 1e-4\nrelaxation = 2.5"));
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "solve"]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("solver.relaxation"), "{stderr}");
    let man = manifest(&out);
    assert_eq!(man["status"], "failed");
    assert_eq!(man["failed_stage"], "config");

    let cfg = write_config(tmp.path(), &SMALL_GRUSHIN.replace("[grid]", "[grid]\nspacing = 3"));
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "solve"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("spacing"));
}

#[test]
fn generator_dump_writes_triplets() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[scenario]
name = "double_gyre"

[grid]
dims = [6, 3]

[time]
tf = 0.5
k = 2

[mu0]
kind = "region"
lower = [0.0, 0.0]
upper = [1.0, 1.0]

[mu1]
kind = "region"
lower = [1.0, 0.0]
upper = [2.0, 1.0]
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "generator-dump"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["drift_0000.txt", "drift_0001.txt", "control_1_plus.txt", "control_2_minus.txt"] {
        let text = fs::read_to_string(out.join("rates").join(f)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# m nnz"));
        let header: Vec<usize> = lines.next().unwrap().split(' ').map(|s| s.parse().unwrap()).collect();
        assert_eq!(header[0], 18);
        assert_eq!(lines.count(), header[1]);
    }
}

#[test]
fn sweep_writes_one_row_per_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[scenario]
name = "double_gyre"

[grid]
dims = [8, 4]

[time]
tf = 1.0
dt = 0.125

[mu0]
kind = "region"
lower = [0.0, 0.0]
upper = [1.0, 1.0]

[mu1]
kind = "region"
lower = [1.0, 0.0]
upper = [2.0, 1.0]

[solver]
tol = 1e-4

[sweep]
horizons = [0.5, 1.0]
dt = 0.125
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let o = setot(&["--config", &cfg, "--out", out.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("cost.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "tf,cost,iterations,residual,converged");
    assert_eq!(rows.len(), 3);
}

#[test]
fn hidden_oracle_prints_values() {
    let o = setot(&["oracle", "translation", "0.3", "0.4"]);
    assert!(o.status.success());
    let v: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!((v - 0.25).abs() < 1e-15);

    let o = setot(&["oracle", "grushin", "0.15", "0.8"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("minimizing true"));

    let help = setot(&["--help"]);
    assert!(!String::from_utf8_lossy(&help.stdout).contains("oracle"));
}
