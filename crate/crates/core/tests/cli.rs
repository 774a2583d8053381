//! End-to-end runs of every subcommand of the binary on the tiny preset.

use std::path::Path;
use std::process::{Command, Output};

use stmfnet::synth::write_translating_dataset;

fn stmfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmfnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = stmfnet(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pngs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".png"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_subcommand_runs_on_the_tiny_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    write_translating_dataset(&data, 2, 9, (32, 32), 1.5, 3).unwrap();

    // make-variant: config text and a fresh checkpoint.
    let (cfg, init) = (t.join("no_us.cfg"), t.join("init.ckpt"));
    ok(&["make-variant", "--name", "no_us", "--out", s(&cfg), "--init-ckpt", s(&init)]);
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("model.levels=0,1"), "{text}");
    assert!(init.exists());
    assert!(ok(&["make-variant", "--name", "unet"]).contains("model.backbone.kind=unet"));

    // train: two short epochs, resumable.
    let run = t.join("run");
    let sets = ["--set", "train.epochs=2", "--set", "train.steps_per_epoch=2", "--set", "train.crop=32"];
    let mut args = vec!["train", "--data", s(&data), "--val", s(&data), "--out", s(&run)];
    args.extend(sets);
    ok(&args);
    for f in ["last.ckpt", "best.ckpt", "train_log.jsonl"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 4 && log.contains("l_lap"), "{log}");

    // finetune-gan from the trained checkpoint.
    let (gan, ckpt) = (t.join("gan"), run.join("last.ckpt"));
    let mut args = vec!["finetune-gan", "--data", s(&data), "--ckpt", s(&ckpt), "--out", s(&gan)];
    args.extend(["--set", "gan.epochs=1", "--set", "train.steps_per_epoch=2", "--set", "train.crop=32"]);
    ok(&args);
    assert!(gan.join("last_gan.ckpt").exists());
    assert!(std::fs::read_to_string(gan.join("gan_log.jsonl")).unwrap().contains("d_real"));

    // interpolate: five frames at 2x become nine.
    let clip = t.join("clip");
    std::fs::create_dir(&clip).unwrap();
    for i in 0..5 {
        let name = format!("frame_{i:04}.png");
        std::fs::copy(data.join("seq000").join(&name), clip.join(&name)).unwrap();
    }
    let frames = t.join("frames");
    ok(&["interpolate", "--in", s(&clip), "--out", s(&frames), "--factor", "2", "--ckpt", s(&ckpt)]);
    let written = pngs(&frames);
    assert_eq!(written.len(), 9);
    assert_eq!(written[0], "frame_0000.png");
    assert_eq!(
        std::fs::read(frames.join("frame_0002.png")).unwrap(),
        std::fs::read(clip.join("frame_0001.png")).unwrap()
    );

    // evaluate: CSV and JSON summary.
    let eval = t.join("eval");
    let summary = ok(&["evaluate", "--data", s(&data), "--ckpt", s(&ckpt), "--out", s(&eval), "--dataset", "synthetic"]);
    assert!(summary.contains("mean_psnr"), "{summary}");
    let csv = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("dataset,sequence,frame,psnr,ssim,runtime"));
    assert!(csv.lines().count() > 1);
    assert!(eval.join("summary.json").exists());

    // visualize-flows: one map per scale and direction.
    let flows = t.join("flows");
    ok(&["visualize-flows", "--in", s(&clip), "--ckpt", s(&ckpt), "--out", s(&flows)]);
    let maps = pngs(&flows);
    assert_eq!(maps.len(), 6, "{maps:?}");
    assert!(maps.iter().all(|m| m.starts_with("meanflow_l")));

    // profile: report line, and a capacity error under a tiny budget.
    let line = ok(&["profile", "--res", "64x48", "--reps", "1"]);
    assert!(line.contains("64x48") || line.contains("64×48"), "{line}");
    let o = stmfnet(&["profile", "--res", "854x480", "--reps", "1", "--mem-limit-mb", "1"]);
    assert_eq!(o.status.code(), Some(3));

    // Error classes map to exit codes.
    assert_eq!(stmfnet(&["interpolate", "--in", s(&clip), "--out", s(&frames), "--ckpt", s(&t.join("nope.ckpt"))]).status.code(), Some(2));
    assert_eq!(stmfnet(&["interpolate", "--in", s(&clip), "--out", s(&frames), "--factor", "3", "--ckpt", s(&ckpt)]).status.code(), Some(1));
    assert_eq!(stmfnet(&["--set", "bogus.key=1", "make-variant"]).status.code(), Some(1));
}
