use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kirkwood(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kirkwood")).env("KIRKWOOD_CACHE_DIR", cache).args(args).output().expect("binary runs")
}

fn entries(cache: &Path) -> usize {
    fs::read_dir(cache).map_or(0, |d| d.filter(|e| !e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.')).count())
}

const PORBIT: [&str; 7] = ["porbit", "--j-min", "-1.6", "--j-max", "-1.5", "--j-step", "0.05"];

#[test]
fn rerun_is_a_byte_identical_cache_hit() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = kirkwood(&cache, &[&PORBIT[..], &["--out", a.to_str().unwrap()]].concat());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("computed"));
    let n = entries(&cache);
    let second = kirkwood(&cache, &[&PORBIT[..], &["--out", b.to_str().unwrap()]].concat());
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stdout).contains("cached"));
    assert_eq!(entries(&cache), n);
    for name in ["porbit.csv", "porbit.gp"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.join("porbit.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "J,x0,T,T_minus_2pi,lambda_u,max_L_dev");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn changing_a_tolerance_misses_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    assert!(kirkwood(&cache, &[&PORBIT[..], &["--out", o]].concat()).status.success());
    let n = entries(&cache);
    let again = kirkwood(&cache, &[&PORBIT[..], &["--out", o, "--integ-tol", "1e-13"]].concat());
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("computed"));
    assert!(entries(&cache) > n);
}

#[test]
fn config_sections_apply_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let conf = tmp.path().join("run.conf");
    fs::write(&conf, "j_min = -1.6\nj_max = -1.5\n[porbit]\nj_step = 0.1\n[splitting]\nj_step = 0.002\n").unwrap();
    let out = tmp.path().join("o");
    let args = ["porbit", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert!(kirkwood(&cache, &args).status.success());
    assert_eq!(fs::read_to_string(out.join("porbit.csv")).unwrap().lines().count(), 3);
    assert!(kirkwood(&cache, &[&args[..], &["--j-step", "0.05"]].concat()).status.success());
    assert_eq!(fs::read_to_string(out.join("porbit.csv")).unwrap().lines().count(), 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();

    let usage = kirkwood(&cache, &["porbit", "--j-step", "0", "--out", o]);
    assert_eq!(usage.status.code(), Some(1));
    assert_eq!(kirkwood(&cache, &["orbits"]).status.code(), Some(1));

    let numerical = kirkwood(&cache, &["porbit", "--j-min", "-1.0", "--j-max", "-1.0", "--out", o]);
    assert_eq!(numerical.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["kind"], "numerical");
    assert_eq!(record["failure"]["J"], -1.0);
    assert_eq!(record["failure"]["command"], "porbit");

    assert!(kirkwood(&cache, &[&PORBIT[..], &["--out", o]].concat()).status.success());
    for e in fs::read_dir(&cache).unwrap() {
        let dir = e.unwrap().path();
        if dir.join("porbit.csv").exists() {
            fs::write(dir.join("porbit.csv"), "J\n").unwrap();
        }
    }
    let corrupt = kirkwood(&cache, &[&PORBIT[..], &["--out", o]].concat());
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("\"kind\":\"cache\""));
}

#[test]
fn channel_commands_emit_declared_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let grid = ["--j-min", "-1.55", "--j-max", "-1.54", "--j-step", "0.01"];
    let run = |cmd: &str| {
        let out = tmp.path().join(cmd);
        let o = kirkwood(&cache, &[&[cmd][..], &grid[..], &["--out", out.to_str().unwrap()]].concat());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let header = |p: &Path| fs::read_to_string(p).unwrap().lines().next().unwrap().to_string();

    let s = run("splitting");
    assert_eq!(header(&s.join("splitting.csv")), "J,i,theta_i");
    assert_eq!(fs::read_to_string(s.join("splitting.csv")).unwrap().lines().count(), 1 + 2 * 4);
    assert!(s.join("splitting.gp").exists());

    let h = run("homoclinic");
    assert_eq!(header(&h.join("channels.csv")), "J,i,x_z,theta_i,us_discrepancy");
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(h.join("tangencies.json")).unwrap()).unwrap();
    assert!(t.is_array());

    let m = run("melnikov");
    assert_eq!(header(&m.join("melnikov.csv")), "J,i,nu,alpha,Re_Bin,Im_Bin,Re_Bout,Im_Bout,Re_B,Im_B,N_used");

    let v = run("variance");
    assert_eq!(header(&v.join("variance.csv")), "J,theta,sigma0_sq");
    assert_eq!(fs::read_to_string(v.join("variance.csv")).unwrap().lines().count(), 1 + 2 * 64);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(v.join("variance_summary.json")).unwrap()).unwrap();
    assert!(summary["min_sigma0_sq"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["positive"], true);

    let a = run("ansatz2");
    assert_eq!(header(&a.join("ansatz2.csv")), "J,alpha_margin,alpha_ok,separation,separation_ok,sigma_min,sigma_ok");
}
