use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ftcl::config::{merge, parse_config_text, parse_override, resolve};
use ftcl::contrastive::Trainer;
use ftcl::encoder::{write_checkpoint, Architecture};

const TINY: &[&str] = &[
    "data.source=synthetic",
    "data.classes=3",
    "data.per_class=40",
    "data.test_per_class=20",
    "data.dim=8",
    "model.hidden=[16]",
    "model.dim=8",
    "train.epochs=2",
    "train.batch_size=16",
    "train.queue_size=64",
    "ft.begin_epoch=1",
    "eval.epochs=10",
];

fn ftcl(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftcl"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn ftcl")
}

fn with_sets<'a>(cmd: &'a str, out: &'a str, sets: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![cmd, "--out", out];
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    args
}

fn tiny_plus<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    TINY.iter().copied().chain(extra.iter().copied()).collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn pretrain_writes_four_artifacts_listed_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ftcl(tmp.path(), &with_sets("pretrain", "run", &tiny_plus(&["train.epochs=1"])));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = tmp.path().join("run");
    let m = manifest(&run);
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["checkpoint.bin", "scores.csv", "grads.csv", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
        assert!(outputs.contains(&f), "{f}");
    }
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["train.epochs"], "1");
}

#[test]
fn same_seed_gives_identical_scores_csv() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = ftcl(tmp.path(), &with_sets("pretrain", out, TINY));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("scores.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let o = ftcl(tmp.path(), &[&with_sets("pretrain", "c", TINY)[..], &["--seed", "7"]].concat());
    assert_eq!(code(&o), 0);
    assert_ne!(read("a"), read("c"));
}

#[test]
fn transform_changes_rows_only_from_begin_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let on = ftcl(tmp.path(), &with_sets("pretrain", "on", TINY));
    let off = ftcl(
        tmp.path(),
        &with_sets("pretrain", "off", &tiny_plus(&["ft.pos=none", "ft.neg=none"])),
    );
    assert_eq!((code(&on), code(&off)), (0, 0));
    let rows = |d: &str| -> Vec<String> {
        fs::read_to_string(tmp.path().join(d).join("scores.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(String::from)
            .collect()
    };
    let (a, b) = (rows("on"), rows("off"));
    assert_eq!(a.len(), b.len());
    let epoch = |r: &str| r.split(',').nth(1).unwrap().parse::<usize>().unwrap();
    let mut differing_after = 0;
    for (x, y) in a.iter().zip(&b) {
        if epoch(x) < 1 {
            assert_eq!(x, y);
        } else if x != y {
            differing_after += 1;
        }
    }
    assert!(differing_after > 0);
}

#[test]
fn config_file_and_manifest_replay() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.cfg"), format!("# tiny run\n{}\n", TINY.join("\n"))).unwrap();
    let o = ftcl(tmp.path(), &["pretrain", "--config", "run.cfg", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ftcl(tmp.path(), &["pretrain", "--config", "a/manifest.json", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoint.bin", "scores.csv", "grads.csv", "losses.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ftcl(tmp.path(), &with_sets("pretrain", "x", &tiny_plus(&["train.tau=-1"])));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.tau"));
    let o = ftcl(tmp.path(), &with_sets("pretrain", "x", &["no.such=1"]));
    assert_eq!(code(&o), 2);
    let o = ftcl(tmp.path(), &with_sets("pretrain", "x", &["data.train_images=missing.gz"]));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = ftcl(tmp.path(), &["pretrain", "--bogus-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_finite_loss_aborts_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ftcl(tmp.path(), &with_sets("pretrain", "nan", &tiny_plus(&["train.lr=1e300"])));
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let m = manifest(&tmp.path().join("nan"));
    assert_eq!(m["status"], "numeric_failure");
    assert!(m["failure"]["step"].as_u64().is_some());
}

#[test]
fn writes_nothing_outside_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ftcl(tmp.path(), &with_sets("pretrain", "only/here", TINY));
    assert_eq!(code(&o), 0);
    let o = ftcl(tmp.path(), &["plot", "only/here", "--out", "only/plots"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let top: Vec<PathBuf> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(top, vec![tmp.path().join("only")]);
}

fn fresh_checkpoint(dir: &Path, extra: &[&str]) -> PathBuf {
    let text: String = TINY.iter().map(|s| format!("{s}\n")).collect();
    let overrides = extra.iter().map(|s| parse_override(s).unwrap()).collect();
    let cfg = resolve(&merge(parse_config_text(&text).unwrap(), overrides)).unwrap();
    let arch = Architecture::new(cfg.data.dim, cfg.model.hidden.clone(), cfg.model.dim);
    let trainer = Trainer::new(arch, cfg.train.clone()).unwrap();
    let path = dir.join("fresh.bin");
    write_checkpoint(&path, &trainer.checkpoint()).unwrap();
    path
}

#[test]
fn probe_of_fresh_encoder_on_signal_free_data_is_at_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = [
        "data.classes=10",
        "data.per_class=200",
        "data.test_per_class=200",
        "data.separation=0",
        "eval.epochs=20",
    ];
    let ckpt = fresh_checkpoint(tmp.path(), &data);
    let ckpt = ckpt.to_str().unwrap();
    let mut reports = Vec::new();
    for out in ["p1", "p2"] {
        let args = [&with_sets("probe", out, &tiny_plus(&data))[..], &["--checkpoint", ckpt]].concat();
        let o = ftcl(tmp.path(), &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        reports.push(fs::read(tmp.path().join(out).join("probe.json")).unwrap());
        assert!(tmp.path().join(out).join("confusion.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
    let r: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    let acc = r["accuracy"].as_f64().unwrap();
    assert!((acc - 0.1).abs() <= 0.05, "{acc}");
}

#[test]
fn probe_without_labels_reports_degenerate_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: String = (0..40).map(|i| format!("{},{},{}\n", i % 3, (i % 5) as f64 / 5.0, 0.5)).collect();
    fs::write(tmp.path().join("t.csv"), rows).unwrap();
    let text = "data.source=csv\ndata.train_csv=t.csv\nmodel.hidden=[4]\nmodel.dim=3\n";
    let cfg = resolve(&parse_config_text(text).unwrap()).unwrap();
    let trainer = Trainer::new(
        Architecture::new(3, cfg.model.hidden.clone(), cfg.model.dim),
        cfg.train.clone(),
    )
    .unwrap();
    write_checkpoint(&tmp.path().join("c.bin"), &trainer.checkpoint()).unwrap();
    let o = ftcl(
        tmp.path(),
        &[
            "probe",
            "--out",
            "p",
            "--checkpoint",
            "c.bin",
            "--set",
            "data.source=csv",
            "--set",
            "data.train_csv=t.csv",
            "--set",
            "model.hidden=[4]",
            "--set",
            "model.dim=3",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("data.labels"), "{}", stderr(&o));
}

#[test]
fn plot_single_and_overlaid_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["r1", "r2"] {
        let o = ftcl(tmp.path(), &with_sets("pretrain", out, &tiny_plus(&["telemetry.pre_ft=false"])));
        assert_eq!(code(&o), 0);
    }
    let count = |svg: &Path, what: &str| fs::read_to_string(svg).unwrap().matches(what).count();

    let o = ftcl(tmp.path(), &["plot", "r1/scores.csv", "--panel", "mean_pos", "--out", "one"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svgs: Vec<_> = fs::read_dir(tmp.path().join("one")).unwrap().collect();
    assert_eq!(svgs.len(), 1);
    assert_eq!(count(&tmp.path().join("one/mean_pos.svg"), "<polyline"), 1);

    let o = ftcl(tmp.path(), &["plot", "r1", "r2", "--panel", "mean_neg", "--out", "two"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = tmp.path().join("two/mean_neg.svg");
    assert_eq!(count(&svg, "<polyline"), 2);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains(">r1<") && text.contains(">r2<"));

    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    let o = ftcl(tmp.path(), &["plot", "empty.csv", "--out", "e"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_emits_one_manifest_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = tiny_plus(&["train.m={0.9, 1.0}", "ft.pos={none, extrapolate}", "eval.after_pretrain=false"]);
    let o = ftcl(tmp.path(), &with_sets("sweep", "sw", &sets));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..4 {
        assert!(tmp.path().join(format!("sw/cell-{i:03}/manifest.json")).exists());
    }
    let summary = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("cell,train.m,ft.pos,"));
    // grids are rejected outside sweep
    let o = ftcl(tmp.path(), &with_sets("pretrain", "x", &["train.m={0.9, 1.0}"]));
    assert_eq!(code(&o), 2);
}
