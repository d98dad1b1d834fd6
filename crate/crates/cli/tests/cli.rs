use std::path::Path;
use std::process::{Command, Output};

fn fewseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fewseg(args);
    assert!(
        out.status.success(),
        "fewseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

const SMALL: &str = "epochs = 1\nepisodes_per_epoch = 3\nchannel_widths = 4,8,16\ncheckpoint_every = 2\n";

#[test]
fn generate_then_stub_eval_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("eval");
    ok(&["generate", "--out", p(&data), "--volumes", "6", "--seed", "4"]);
    assert!(data.join("dataset.json").exists());
    let table = ok(&["eval", "--data", p(&data), "--stub", "truth", "--folds", "3", "--arm", "gcn-de", "--out", p(&out)]);
    let row = table.lines().find(|l| l.starts_with("gcn-de")).expect("arm row");
    let values: Vec<&str> = row.split_whitespace().skip(1).collect();
    assert_eq!(values, ["100.00"; 5]);
    let csv = std::fs::read_to_string(out.join("metrics_gcn-de.csv")).unwrap();
    assert!(csv.starts_with("arm,seed,config_hash,organ,fold,dc,heldout_reads"));
    assert!(out.join("metrics_gcn-de.txt").exists());
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--out", p(&data), "--volumes", "4", "--seed", "1"]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["train", "--config", p(&cfg), "--data", p(&data), "--arm", "gcn-de", "--seed", "7", "--out", p(&out)]);
        assert!(out.join("model.ckpt").exists());
        assert!(out.join("checkpoint_000002.ckpt").exists());
        std::fs::read_to_string(out.join("losses.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a.lines().next(), Some("iteration,L_comb,L_de,L_overall"));
    assert_eq!(a.lines().count(), 4);
    assert_eq!(a, run("b"));
}

#[test]
fn bench_reports_analytic_counts() {
    let out = ok(&["bench", "--sizes", "16,32", "--reps", "1"]);
    for (h, p) in [(16, 4), (32, 6)] {
        let naive = fewseg::correlation::flops::naive_gc_macs(h, h, 16, 16);
        let eff = fewseg::correlation::flops::efficient_gc_macs(h, h, 16, 16, p, p);
        let row = out
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{h}x{h}")))
            .expect("size row");
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols[2].parse::<u64>().unwrap(), naive);
        assert_eq!(cols[3].parse::<u64>().unwrap(), eff);
        if h >= 32 {
            assert!(eff < naive);
        }
    }
}

#[test]
fn overlay_writes_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("png");
    ok(&["generate", "--out", p(&data), "--volumes", "2"]);
    ok(&["overlay", "--data", p(&data), "--organ", "1", "--out", p(&out), "--scale", "2"]);
    let pngs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert!(!pngs.is_empty());
    let img = image::open(&pngs[0]).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (128, 128));
    assert!(img.pixels().any(|px| px.0 == [255, 0, 0]));
}

#[test]
fn oracle_check_passes() {
    let out = ok(&["oracle-check", "--no-timing"]);
    assert!(out.contains(", 0 failed"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn bad_input_exits_nonzero() {
    assert!(!fewseg(&["train", "--arm", "resnet", "--out", "/tmp/x"]).status.success());
    assert!(!fewseg(&["eval", "--stub", "truth"]).status.success());
    assert!(!fewseg(&["train", "--holdout", "7", "--out", "/tmp/x"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "learning_rate = -1\n").unwrap();
    assert!(!fewseg(&["train", "--config", p(&bad), "--out", p(dir.path())]).status.success());
}
