use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mudsic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mudsic")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
name = "small"
seed = 5
n_users = 4
trials_macro = 2
trials_micro = 3
schemes = ["sic:off", "sic:2"]

[sweep]
var = "pmax"
from = -10
to = 20
step = 1
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn sweep_writes_one_row_per_point_and_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = mudsic(&["sweep", &cfg, "--quiet", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let overlay = fs::read_to_string(out.join("small.csv")).unwrap();
    assert!(overlay.starts_with("sweep_var,sweep_value,scheme,mean_goodput,"));
    assert_eq!(overlay.lines().count(), 1 + 31 * 2);
    let single = fs::read_to_string(out.join("small_sic-2.csv")).unwrap();
    assert_eq!(single.lines().count(), 1 + 31);
    assert!(single.lines().skip(1).all(|l| l.contains(",sic:2,")));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("small_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["series"][0]["files"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_tables_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = mudsic(&[
            "sweep", &cfg, "--quiet", "--from", "0", "--to", "10", "--step", "5", "--trials-macro", "6", "--threads", threads,
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tables.push(fs::read(out.join("small.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn several_powers_give_several_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "users.toml",
        "name = \"u\"\np_max_dbm = [-10, -3]\ntrials_macro = 2\ntrials_micro = 2\n[sweep]\nvar = \"users\"\nvalues = [2, 3]\n",
    );
    let out = dir.path().join("out");
    let o = mudsic(&["sweep", &cfg, "--quiet", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("u_p-10dBm.csv").exists());
    assert!(out.join("u_p-3dBm.csv").exists());
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.toml", "name = \"x\"\nmax_power = 3\n");
    let o = mudsic(&["sweep", &unknown, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max_power"), "{}", stderr(&o));

    let bad_scheme = write(dir.path(), "b.toml", "schemes = [\"sic:soon\"]\n");
    assert_eq!(code(&mudsic(&["describe", &bad_scheme])), 2);

    let empty = write(dir.path(), "c.toml", "[sweep]\nvar = \"pmax\"\nfrom = 5\nto = 0\nstep = 1\n");
    assert_eq!(code(&mudsic(&["describe", &empty])), 2);

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&mudsic(&["describe", missing.to_str().unwrap()])), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&mudsic(&["frobnicate"])), 1);
    assert_eq!(code(&mudsic(&["describe", "--preset", "nope"])), 1);
    assert_eq!(code(&mudsic(&["sweep", "--preset", "mdiv", "--var", "speed"])), 1);
    assert_eq!(code(&mudsic(&["--help"])), 0);
}

#[test]
fn describe_lists_presets_and_resolves_them() {
    let o = mudsic(&["describe"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["decoding-order", "baselines", "mdiv", "path-loss", "users"] {
        assert!(text.contains(name), "{name} missing");
    }
    let o = mudsic(&["describe", "--preset", "path-loss"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("var = \"path-loss-exponent\""));
    assert!(text.contains("17 grid points"));
}

#[test]
fn trace_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("tr");
    let o = mudsic(&["trace", &cfg, "--point", "10", "--scheme", "sic:2", "--macro", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let heads = [
        ("trace.csv", "base,iter,user,sinr_db,rate,success"),
        ("plan.csv", "user_id,serving_base,mdiv_bases,power_mw,rate_bps_hz"),
        ("outage.csv", "user_id,rate,outage_bound,clamp_count,enum_mode"),
        ("positions.csv", "user_id,x_m,y_m"),
        ("gains.csv", "user_id,base_id,gain_db"),
    ];
    for (file, head) in heads {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(head), "{file}");
    }
    let plan = fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(plan.lines().count(), 1 + 4);
    assert_eq!(code(&mudsic(&["trace", &cfg, "--scheme", "cdma", "--out", out.to_str().unwrap()])), 1);
}

#[test]
fn validate_passes_and_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = mudsic(&["validate", "--seed", "2", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 6);

    let o = mudsic(&["validate", "--seed", "2", "--inject-fault", "beta-sign"]);
    assert_eq!(code(&o), 3);
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    let failing: Vec<&str> = out.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(failing.iter().any(|l| l.contains("conditional-outage")), "{out}");
    assert!(stderr(&o).contains("conditional-outage"));
}
