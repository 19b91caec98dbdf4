use std::process::Command;

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dare-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn single_run_prints_header_and_row() {
    let out = lab(&[
        "--protocol",
        "dare",
        "--scenario",
        "good-case",
        "--n",
        "4",
        "--seed",
        "3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("protocol,scenario,n,t,L,kappa,delta,gst,seed,latency"));
    assert!(lines[1].starts_with("dare,good-case,4,1,1024,256,10,0,3,"));
    assert!(lines[1].ends_with(",true,true"));
}

#[test]
fn n_that_is_not_three_t_plus_one_is_rejected() {
    let out = lab(&["--n", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("3t + 1"));
}

#[test]
fn explicit_t_allows_other_sizes() {
    let out = lab(&["--n", "6", "--t", "1", "--scenario", "silent-faults"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_reports_a_slope_and_rejects_short_axes() {
    let out = lab(&["--scenario", "adversarial-shift", "--sweep", "n=4,7,10"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fitted slope"));
    let out = lab(&["--sweep", "n=4,7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = lab(&["--scenario", "nope"]);
    assert!(!out.status.success());
}
