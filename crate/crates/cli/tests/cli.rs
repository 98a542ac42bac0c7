use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topolevel::ImageBuffer;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topolevel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn topolevel")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Dark ring on a white background, radii 20 and 45 at 128 pixels.
fn annulus_png(dir: &Path) -> PathBuf {
    let n = 128;
    let img = ImageBuffer::from_fn(n, n, 1, |x, y| {
        let r = (x as f64 - 63.5).hypot(y as f64 - 63.5);
        vec![if (20.0..=45.0).contains(&r) { 0.0 } else { 1.0 }]
    });
    let p = dir.join("annulus.png");
    img.write_png(&p).unwrap();
    p
}

fn subpaths(svg: &str) -> usize {
    let start = svg.find(" d=\"").map(|i| i + 4);
    start.map_or(0, |i| svg[i..].split('"').next().unwrap().matches('M').count())
}

#[test]
fn vectorize_annulus_gives_two_loops_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let png = annulus_png(dir.path());
    let out = dir.path().join("nested/out.svg");
    let o = run(&["vectorize", "--input", s(&png), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(subpaths(&svg), 2);
    assert!(stdout(&o).contains("components 1 holes 1"), "{}", stdout(&o));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("nested/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "vectorize");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["config_sha256"].is_string());
    let history = std::fs::read_to_string(dir.path().join("nested/history.csv")).unwrap();
    assert!(history.lines().count() > 2);
}

#[test]
fn vectorize_missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["vectorize", "--input", s(&dir.path().join("nope.png")), "--out", s(&dir.path().join("o.svg"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn zero_iterations_still_exports() {
    let dir = tempfile::tempdir().unwrap();
    let png = annulus_png(dir.path());
    let out = dir.path().join("o.svg");
    let o = run(&["vectorize", "--input", s(&png), "--out", s(&out), "--max-iters", "0"]);
    assert_eq!(code(&o), 0);
    // the initial disk, untouched
    assert_eq!(subpaths(&std::fs::read_to_string(&out).unwrap()), 1);
}

#[test]
fn toml_config_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let png = annulus_png(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[evolve2d]\nmax_iters = 0\neps_h = 2.0\n").unwrap();
    let out = dir.path().join("o.svg");
    let o = run(&["--config", s(&cfg), "--seed", "9", "vectorize", "--input", s(&png), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["evolve2d"]["max_iters"], 0);
    assert_eq!(m["config"]["evolve2d"]["eps_h"], 2.0);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);

    std::fs::write(&cfg, "[evolve2d]\nmax_iter = 3\n").unwrap();
    let o = run(&["--config", s(&cfg), "vectorize", "--input", s(&png), "--out", s(&out)]);
    assert_eq!(code(&o), 1, "unknown keys are rejected");
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(code(&run(&["demo", "teaser2d-c", "--out", "/tmp/x"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["check", "--only", "everything"])), 1);
}

#[test]
fn check_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let oa = run(&["--seed", "7", "check", "--out", s(&a)]);
    let ob = run(&["--seed", "7", "check", "--out", s(&b)]);
    assert_eq!(code(&oa), 0, "{}", stdout(&oa));
    assert_eq!(code(&ob), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(oa.stdout, ob.stdout);
    assert!(stdout(&oa).contains("0 failed"));
}

#[test]
fn check_single_suite() {
    let o = run(&["check", "--only", "td3d"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("td3d") && l.contains("visible probes")), "{text}");
    assert!(text.contains("0 failed"));
    assert!(!text.contains("gateaux2d"));
}

fn genus_line(o: &Output) -> i64 {
    let text = stdout(o);
    let line = text.lines().find(|l| l.starts_with("final genus")).unwrap_or_else(|| panic!("no genus in {text}"));
    line.split_whitespace().nth(2).unwrap().parse().unwrap()
}

#[test]
fn recon3d_torus_needs_the_topological_term() {
    let dir = tempfile::tempdir().unwrap();
    let (td, sd) = (dir.path().join("td"), dir.path().join("sd"));
    let o = run(&["recon3d", "--synthetic", "torus", "--out", s(&td)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(genus_line(&o), 1);
    for f in ["final.obj", "metrics.csv", "manifest.json"] {
        assert!(td.join(f).exists(), "{f}");
    }
    let o = run(&["recon3d", "--synthetic", "torus", "--lambda-td", "0", "--out", s(&sd)]);
    assert_eq!(genus_line(&o), 0);
}

#[test]
fn recon3d_rejects_mismatched_views() {
    let dir = tempfile::tempdir().unwrap();
    let cams = dir.path().join("cams.txt");
    std::fs::write(
        &cams,
        "# two cameras\n0 0 -3 0 0 1 0 1 0 0.6 16 16\n3 0 0 -1 0 0 0 1 0 0.6 16 16\n",
    )
    .unwrap();
    let png = dir.path().join("v0.png");
    ImageBuffer::filled(16, 16, &[1.0]).write_png(&png).unwrap();
    let o = run(&["recon3d", "--cameras", s(&cams), "--refs", s(&png), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 cameras but 1 reference"));
}

#[test]
fn demos_hold_their_claims() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["teaser2d-a", "teaser2d-b"] {
        let out = dir.path().join(name);
        let o = run(&["demo", name, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{name}: {}", stdout(&o));
        for f in ["target.png", "td_final.svg", "td_history.csv", "sd_history.csv", "summary.csv", "manifest.json"] {
            assert!(out.join(f).exists(), "{name}/{f}");
        }
    }
    let out = dir.path().join("shadow");
    let o = run(&["demo", "shadow", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(out.join("shadow_metrics.csv").exists());
    assert!(out.join("final_render.png").exists());
}
