use std::fs;
use std::path::Path;
use std::process::Command as Process;

use nonlocal_cli::config::{Command, TensorKind};
use nonlocal_cli::{parse_config, ConfigError};

const ELLIPTIC: &str = r#"
command = "solve-elliptic"
[domain]
a = -1.0
b = 1.0
h = 0.125
[kernel]
s = 0.5
[tensor]
kind = "identity"
[forcing]
kind = "constant"
value = 1.0
"#;

fn transport(s: f64) -> String {
    format!(
        "command = \"solve-transport\"\n[domain]\nh = 0.0625\n[kernel]\ns = {s}\n[advection]\nspeed = 0.8\n\
         [initial]\nkind = \"plume\"\ncenter = -0.5\nsigma = 0.15\nradius = 0.45\n[time]\nt_end = 0.2\ndt = 0.02\nstride = 2\n"
    )
}

fn field_of(err: ConfigError) -> &'static str {
    match err {
        ConfigError::Invalid { field, .. } => field,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn minimal_elliptic_config_is_valid() {
    let cfg = parse_config(ELLIPTIC).unwrap();
    assert_eq!(cfg.command, Command::SolveElliptic);
    assert_eq!(cfg.kernel.s, Some(0.5));
    assert_eq!(cfg.tensor.kind, TensorKind::Identity);
}

#[test]
fn order_outside_unit_interval_names_s() {
    let err = parse_config(&ELLIPTIC.replace("s = 0.5", "s = 1.2")).unwrap_err();
    assert_eq!(field_of(err), "s");
}

#[test]
fn transport_rejects_low_order_citing_the_restriction() {
    let err = parse_config(&transport(0.4)).unwrap_err();
    assert!(err.to_string().contains("[0.5, 1)"), "{err}");
    assert_eq!(field_of(err), "s");
    assert!(parse_config(&transport(0.6)).is_ok());
}

#[test]
fn unknown_keys_are_reported_with_line_and_name() {
    let text = ELLIPTIC.replace("value = 1.0", "value = 1.0\nvalu = 2.0");
    match parse_config(&text).unwrap_err() {
        ConfigError::Parse { line, message } => {
            assert_eq!(line, 14);
            assert!(message.contains("valu"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let err = parse_config("command = \"verify\"\n[domain]\nh = 0.1\n[domain.extra]\nx = 1\n").unwrap_err();
    assert!(
        matches!(err, ConfigError::Parse { .. }),
        "nested tables are not part of the format: {err:?}"
    );
}

#[test]
fn command_specific_fields_are_required() {
    let text = transport(0.6).replace("dt = 0.02\n", "");
    assert_eq!(field_of(parse_config(&text).unwrap_err()), "time.dt");
    let text = transport(0.6).replace("[advection]\nspeed = 0.8\n", "");
    assert_eq!(field_of(parse_config(&text).unwrap_err()), "advection.speed");
    assert_eq!(field_of(parse_config("command = \"kernel-table\"\n").unwrap_err()), "s");
    assert!(parse_config("command = \"verify\"\n").is_ok());
    assert!(matches!(
        parse_config("command = \"plot\"\n").unwrap_err(),
        ConfigError::Parse { line: 1, .. }
    ));
}

fn nonlocal(config: &str, dir: &Path) -> (i32, String) {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_nonlocal"))
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
            "--serial",
        ])
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = nonlocal(&transport(0.4), dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("`s`"), "{err}");
    let (code, _) = nonlocal("command = \"verify\"\nbogus = 1\n", dir.path());
    assert_eq!(code, 2);
}

#[test]
fn unstable_explicit_step_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = transport(0.6)
        .replace("solve-transport", "solve-parabolic")
        .replace("[advection]\nspeed = 0.8\n", "");
    let cfg = cfg.replace("stride = 2", "stride = 2\ntheta = 0.0");
    let (code, err) = nonlocal(&cfg, dir.path());
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("stability bound"), "{err}");
}

#[test]
fn kernel_table_for_identity_matches_fractional_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = nonlocal(
        "command = \"kernel-table\"\n[kernel]\ns = 0.5\n[kernel_table]\npoints = 5\n",
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("out/kernel_table.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "r [length],gamma_eq [length^-(n+2s)],gamma_fl [length^-(n+2s)],ratio [-]"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert!((r[3] - 1.0).abs() < 1e-6, "{r:?}");
    }
    assert!(dir.path().join("out/kernel_table.svg").exists());
}

#[test]
fn transport_outputs_are_byte_identical_and_self_contained() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(nonlocal(&transport(0.6), a.path()).0, 0);
    assert_eq!(nonlocal(&transport(0.6), b.path()).0, 0);
    let fa = read_dir_sorted(&a.path().join("out"));
    assert_eq!(fa, read_dir_sorted(&b.path().join("out")));

    let csv = fa
        .iter()
        .filter(|(n, _)| n.starts_with("snapshot_") && n.ends_with(".csv"))
        .count();
    let svg: Vec<_> = fa.iter().filter(|(n, _)| n.ends_with(".svg")).collect();
    assert_eq!(csv, 6);
    assert_eq!(svg.len(), csv, "one plot per snapshot");
    for (_, bytes) in svg {
        let text = std::str::from_utf8(bytes).unwrap();
        assert!(text.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(!text.contains("href") && !text.contains("<script") && !text.contains("url("));
    }
    for (name, bytes) in fa.iter().filter(|(n, _)| n.ends_with(".csv")) {
        let text = std::str::from_utf8(bytes).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.contains('[') && header.contains(','), "{name}: {header}");
    }
    let moments = String::from_utf8(fa.iter().find(|(n, _)| n == "moments.csv").unwrap().1.clone()).unwrap();
    let centres: Vec<f64> = moments
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(centres.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn verify_exit_status_follows_gating_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = nonlocal("command = \"verify\"\n[domain]\nh = 0.0625\n", dir.path());
    assert_eq!(code, 0, "{err}");
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(report.starts_with("name,anchor,ids,error [-],tolerance [-],pass,gating\n"));
    assert!(report.lines().count() > 13);

    let strict = tempfile::tempdir().unwrap();
    let (code, _) = nonlocal(
        "command = \"verify\"\n[domain]\nh = 0.0625\n[tolerances]\noperator_equivalence = 1e-300\n",
        strict.path(),
    );
    assert_eq!(code, 4);
    assert!(
        strict.path().join("out/report.csv").exists(),
        "report is written even when checks fail"
    );
}
