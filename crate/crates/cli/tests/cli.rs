use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../nets")
}

fn net(name: &str) -> String {
    nets().join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilestitch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn stitched_labels_match_the_oracle_byte_for_byte() {
    let d = TempDir::new().unwrap();
    let unet = net("unet2_valid.net");
    let (st, or) = (path(&d, "st"), path(&d, "or"));
    let common = ["--net", &unet, "--seed", "7", "--synth", "3", "--size", "300"];
    ok(&[&["stitch"][..], &common, &["--patch", "92", "--out", &st]].concat());
    ok(&[&["oracle"][..], &common, &["--out", &or]].concat());
    let a = fs::read(Path::new(&st).join("labels.ras1")).unwrap();
    let b = fs::read(Path::new(&or).join("labels.ras1")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(Path::new(&st).join("prob.ras1")).unwrap(),
        fs::read(Path::new(&or).join("prob.ras1")).unwrap()
    );
}

#[test]
fn bench_rows_follow_grid_arithmetic() {
    let d = TempDir::new().unwrap();
    let s = path(&d, "s");
    let b = path(&d, "b");
    ok(&["synth", "--seed", "1", "--width", "512", "--height", "512", "--out", &s]);
    let tile = Path::new(&s).join("tile.ras1").display().to_string();
    let pool = net("padded_pool.net");
    ok(&[
        "bench",
        "--net",
        &pool,
        "--seed",
        "1",
        "--tile",
        &tile,
        "--sizes",
        "64,128,256",
        "--runs",
        "1",
        "--out",
        &b,
    ]);
    let csv = fs::read_to_string(Path::new(&b).join("bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let entries: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(entries, ["64", "16", "4"]);
}

#[test]
fn correlation_flags_period_multiples() {
    let d = TempDir::new().unwrap();
    let c = path(&d, "c");
    let unet = net("unet2_valid.net");
    ok(&[
        "corr",
        "--net",
        &unet,
        "--seed",
        "2",
        "--synth",
        "4",
        "--max-shift",
        "8",
        "--out",
        &c,
    ]);
    let csv = fs::read_to_string(Path::new(&c).join("corr.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 64);
    let exact: Vec<(&str, &str)> = rows.iter().filter(|r| r[3] == "1").map(|r| (r[0], r[1])).collect();
    assert_eq!(exact, [("0", "0"), ("0", "4"), ("4", "0"), ("4", "4")]);
    assert!(Path::new(&c).join("corr.pgm").exists());
}

#[test]
fn geom_reports_period_and_margins() {
    let d = TempDir::new().unwrap();
    let g = path(&d, "g");
    let unet4 = ok(&["geom", "--net", &net("unet4_valid.net"), "--out", &g]);
    assert!(unet4.contains("\noutput 388\n"), "{unet4}");
    assert!(unet4.contains("margin_in 92\n"));
    let pool = ok(&["geom", "--net", &net("pool4.net"), "--probe", "64", "--out", &g]);
    assert!(pool.starts_with("delta_tot 16\n"));
    let id = ok(&["geom", "--net", &net("identity.net"), "--probe", "10", "--out", &g]);
    assert!(id.contains("delta_tot 1\nmargin_in 0\n"));
    assert!(id.contains("contamination_margin 0\n"));
}

#[test]
fn synth_is_reproducible_and_manifested() {
    let d = TempDir::new().unwrap();
    let (a, b) = (path(&d, "a"), path(&d, "b"));
    for out in [&a, &b] {
        ok(&[
            "synth", "--seed", "9", "--width", "40", "--height", "30", "--rects", "0", "--out", out,
        ]);
    }
    let ta = fs::read(Path::new(&a).join("tile.ras1")).unwrap();
    assert_eq!(ta, fs::read(Path::new(&b).join("tile.ras1")).unwrap());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&a).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["params"]["synth"]["seed"], 9);
    assert_eq!(m["outputs"][0], "tile.ras1");
}

#[test]
fn replayed_plan_reproduces_the_stitch() {
    let d = TempDir::new().unwrap();
    let pool = net("padded_pool.net");
    let (p, x, y) = (path(&d, "p"), path(&d, "x"), path(&d, "y"));
    ok(&[
        "plan",
        "--net",
        &pool,
        "--size",
        "96",
        "--strategy",
        "clip:5",
        "--patch",
        "42",
        "--out",
        &p,
    ]);
    let plan = Path::new(&p).join("plan.txt").display().to_string();
    let common = ["--net", &pool, "--seed", "4", "--synth", "8", "--size", "96"];
    ok(&[
        &["stitch"][..],
        &common,
        &["--strategy", "clip:5", "--patch", "42", "--out", &x],
    ]
    .concat());
    ok(&[&["stitch"][..], &common, &["--plan", &plan, "--out", &y]].concat());
    for f in ["prob.ras1", "plan.txt"] {
        assert_eq!(
            fs::read(Path::new(&x).join(f)).unwrap(),
            fs::read(Path::new(&y).join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let d = TempDir::new().unwrap();
    let unet = net("unet2_valid.net");
    let pool = net("padded_pool.net");
    let x = path(&d, "x");

    // neither weights nor seed
    assert_eq!(code(&["stitch", "--net", &unet, "--synth", "1", "--out", &x]), 2);
    assert_eq!(
        code(&[
            "stitch",
            "--net",
            &unet,
            "--seed",
            "1",
            "--synth",
            "1",
            "--strategy",
            "zigzag"
        ]),
        2
    );

    let bad = path(&d, "bad.ras1");
    fs::write(&bad, b"RAS1 nope").unwrap();
    assert_eq!(
        code(&["oracle", "--net", &unet, "--seed", "1", "--tile", &bad, "--out", &x]),
        3
    );

    // 93 is not an exact input size for this network
    assert_eq!(
        code(&["stitch", "--net", &unet, "--seed", "1", "--synth", "1", "--patch", "93", "--out", &x]),
        4
    );

    let p = path(&d, "p");
    ok(&["plan", "--net", &pool, "--size", "64", "--patch", "32", "--out", &p]);
    let text = fs::read_to_string(Path::new(&p).join("plan.txt")).unwrap();
    let gap: String = text
        .lines()
        .filter(|l| !l.starts_with("entry in 32 32"))
        .map(|l| format!("{l}\n"))
        .collect();
    let gap_path = path(&d, "gap.txt");
    fs::write(&gap_path, gap).unwrap();
    assert_eq!(
        code(&[
            "stitch", "--net", &pool, "--seed", "1", "--synth", "1", "--size", "64", "--plan", &gap_path, "--out", &x
        ]),
        5
    );
}

#[test]
fn reruns_are_byte_identical() {
    let d = TempDir::new().unwrap();
    let pool = net("padded_pool.net");
    let outs = [path(&d, "r1"), path(&d, "r2")];
    for o in &outs {
        ok(&[
            "avg-sweep",
            "--net",
            &pool,
            "--seed",
            "3",
            "--synth",
            "5",
            "--size",
            "64",
            "--patch",
            "32",
            "--shifts",
            "4",
            "--out",
            o,
        ]);
    }
    for f in ["sweep.csv", "manifest.json"] {
        let a = fs::read_to_string(Path::new(&outs[0]).join(f)).unwrap();
        let b = fs::read_to_string(Path::new(&outs[1]).join(f)).unwrap();
        // argv differs only in the output directory
        assert_eq!(a.replace("r1", "r2"), b, "{f}");
    }
}
