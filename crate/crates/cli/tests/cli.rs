use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raediff::denoiser::{write_checkpoint, TinyDenoiser};
use raediff::io::{layout, list_images, write_dataset, write_image};
use raediff::toy::{cross_trigger, patterns};
use raediff::{ImageTensor, Shape};
use tempfile::TempDir;

const SCHEDULE: [&str; 2] = ["--timesteps", "60"];

fn raediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raediff"))
        .args(args)
        .env("RAEDIFF_THREADS", "2")
        .output()
        .expect("spawn raediff")
}

fn ok(args: &[&str]) -> Output {
    let out = raediff(args);
    assert!(
        out.status.success(),
        "raediff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (0..4).map(|i| format!("img{i}.pgm")).collect();
        write_dataset(&dir.path().join("clean"), &names, &patterns(4, 8)).unwrap();
        write_image(&cross_trigger(8), dir.path().join("trigger.pgm")).unwrap();
        let other = ImageTensor::new(
            Shape::new(8, 8, 1),
            (0..64).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect(),
        )
        .unwrap();
        write_image(&other, dir.path().join("other.pgm")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, checkpoint: &str, iterations: &str, seed: &str) -> PathBuf {
        let ckpt = self.path(checkpoint);
        let (clean, trigger) = (self.path("clean"), self.path("trigger.pgm"));
        let mut args = vec![
            "train", "--in", s(&clean), "--trigger", s(&trigger), "--checkpoint", s(&ckpt),
            "--iterations", iterations, "--batch", "4", "--hidden", "16", "--seed", seed,
        ];
        args.extend(SCHEDULE);
        ok(&args);
        ckpt
    }

    fn protect(&self, ckpt: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let clean = self.path("clean");
        let trigger = self.path("trigger.pgm");
        let mut args = vec![
            "protect", "--in", s(&clean), "--out", s(&out), "--trigger", s(&trigger),
            "--checkpoint", s(ckpt), "--seed", "7",
        ];
        args.extend(SCHEDULE);
        args.extend(extra);
        ok(&args);
        out
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    list_images(dir)
        .unwrap()
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

#[test]
fn zero_iterations_write_the_initial_parameters() {
    let f = Fixture::new();
    let ckpt = f.train("init.ckpt", "0", "3");
    let mut expected = Vec::new();
    write_checkpoint(&TinyDenoiser::new(Shape::new(8, 8, 1), 16, 3).unwrap(), &mut expected).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), expected);
    let log = fs::read_to_string(ckpt.with_extension("loss.csv")).unwrap();
    assert_eq!(log, "iteration,loss\n");
}

#[test]
fn training_is_reproducible() {
    let f = Fixture::new();
    let a = f.train("a.ckpt", "30", "1");
    let b = f.train("b.ckpt", "30", "1");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(a.with_extension("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(log.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn protect_writes_all_levels_and_replays_identically() {
    let f = Fixture::new();
    let ckpt = f.train("m.ckpt", "5", "0");
    let out = f.protect(&ckpt, "prot", &[]);
    for level in 1..=3 {
        assert_eq!(list_images(&layout::noisy_dir(&out, level)).unwrap().len(), 4);
        assert_eq!(list_images(&layout::protected_dir(&out, level)).unwrap().len(), 4);
    }
    let replayed = f.path("replayed");
    ok(&[
        "replay", "--in", s(&out), "--out", s(&replayed),
        "--trigger", s(&f.path("trigger.pgm")), "--checkpoint", s(&ckpt),
    ]);
    for level in 1..=3 {
        assert_eq!(dir_bytes(&layout::noisy_dir(&out, level)), dir_bytes(&layout::noisy_dir(&replayed, level)));
        assert_eq!(
            dir_bytes(&layout::protected_dir(&out, level)),
            dir_bytes(&layout::protected_dir(&replayed, level))
        );
    }
    assert_eq!(
        fs::read(out.join(layout::MANIFEST_FILE)).unwrap(),
        fs::read(replayed.join(layout::MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn zero_adverse_steps_leave_noisy_files_untouched() {
    let f = Fixture::new();
    let ckpt = f.train("m.ckpt", "0", "0");
    let out = f.protect(&ckpt, "prot", &["--t-r", "0"]);
    for level in 1..=3 {
        assert_eq!(dir_bytes(&layout::noisy_dir(&out, level)), dir_bytes(&layout::protected_dir(&out, level)));
    }
}

#[test]
fn restore_requires_the_recorded_trigger() {
    let f = Fixture::new();
    let ckpt = f.train("m.ckpt", "0", "0");
    let out = f.protect(&ckpt, "prot", &[]);
    let restored = f.path("restored");
    let refused = raediff(&[
        "restore", "--in", s(&out), "--out", s(&restored),
        "--trigger", s(&f.path("other.pgm")), "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("digest mismatch"));
    assert!(!restored.exists());

    let accepted = ok(&[
        "restore", "--in", s(&out), "--out", s(&restored),
        "--trigger", s(&f.path("trigger.pgm")), "--checkpoint", s(&ckpt),
    ]);
    assert!(String::from_utf8_lossy(&accepted.stderr).contains("restored with 28 reverse steps"));
    for level in 1..=3 {
        assert_eq!(list_images(&layout::level_dir(&restored, level)).unwrap().len(), 4);
    }

    let again = f.path("again");
    ok(&[
        "restore", "--in", s(&out), "--out", s(&again),
        "--trigger", s(&f.path("trigger.pgm")), "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(dir_bytes(&layout::level_dir(&restored, 2)), dir_bytes(&layout::level_dir(&again, 2)));
}

#[test]
fn restore_flags_override_the_manifest() {
    let f = Fixture::new();
    let ckpt = f.train("m.ckpt", "0", "0");
    let out = f.protect(&ckpt, "prot", &[]);
    let restored = f.path("restored");
    let run = ok(&[
        "restore", "--in", s(&out), "--out", s(&restored), "--trigger", s(&f.path("trigger.pgm")),
        "--checkpoint", s(&ckpt), "--t-r", "10", "--eta", "1.25", "--level", "2",
    ]);
    assert!(String::from_utf8_lossy(&run.stderr).contains("restored with 13 reverse steps"));
    assert!(layout::level_dir(&restored, 2).exists());
    assert!(!layout::level_dir(&restored, 1).exists());
}

#[test]
fn evaluate_identical_directories() {
    let f = Fixture::new();
    let clean = f.path("clean");
    let report = f.path("report.csv");
    ok(&["evaluate", "--in", s(&clean), "--against", s(&clean), "--out", s(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "file,mse,psnr,ssim");
    assert_eq!(rows.len(), 1 + 4 + 1);
    for row in &rows[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[2], "inf");
        assert_eq!(cols[3].parse::<f64>().unwrap(), 1.0);
    }
    assert!(rows[5].starts_with("mean,"));
}

#[test]
fn evaluate_rejects_misaligned_directories() {
    let f = Fixture::new();
    let fewer = f.path("fewer");
    let names = vec!["img0.pgm".to_owned()];
    write_dataset(&fewer, &names, &patterns(1, 8)).unwrap();
    let out = raediff(&["evaluate", "--in", s(&f.path("clean")), "--against", s(&fewer)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grading_increases_distance_with_level() {
    let f = Fixture::new();
    let (clean, trigger, out) = (f.path("clean"), f.path("trigger.pgm"), f.path("graded"));
    let mut args = vec![
        "grade", "--in", s(&clean), "--out", s(&out), "--trigger", s(&trigger), "--levels", "5,20,50",
    ];
    args.extend(SCHEDULE);
    let run = ok(&args);
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ordering strict"));
    for level in 1..=3 {
        assert_eq!(list_images(&layout::noisy_dir(&out, level)).unwrap().len(), 4);
    }
}

#[test]
fn sampling_logs_seeds_and_is_reproducible() {
    let f = Fixture::new();
    let ckpt = f.train("m.ckpt", "3", "0");
    let trigger = f.path("trigger.pgm");
    let run = |out: &str| {
        let out = f.path(out);
        let mut args = vec![
            "sample", "--out", s(&out), "--trigger", s(&trigger),
            "--checkpoint", s(&ckpt), "--count", "3", "--seed", "11",
        ];
        args.extend(SCHEDULE);
        let log = ok(&args);
        (dir_bytes(&out), String::from_utf8(log.stdout).unwrap())
    };
    let (a, log) = run("s1");
    let (b, _) = run("s2");
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("sample_0000.pgm seed="));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(raediff(&["protect"]).status.code(), Some(1));
    assert_eq!(raediff(&["bogus"]).status.code(), Some(1));
    assert_eq!(raediff(&["--help"]).status.code(), Some(0));

    let small = f.path("small.pgm");
    write_image(&cross_trigger(4), &small).unwrap();
    let mismatch = raediff(&[
        "train", "--in", s(&f.path("clean")), "--trigger", s(&small),
        "--checkpoint", s(&f.path("x.ckpt")), "--iterations", "0",
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("shape mismatch"));

    let ckpt = f.train("m.ckpt", "0", "0");
    let too_long = raediff(&[
        "protect", "--in", s(&f.path("clean")), "--out", s(&f.path("p")), "--trigger", s(&f.path("trigger.pgm")),
        "--checkpoint", s(&ckpt), "--timesteps", "60", "--t-r", "50",
    ]);
    assert_eq!(too_long.status.code(), Some(1));

    let missing = raediff(&[
        "protect", "--in", s(&f.path("clean")), "--out", s(&f.path("p")), "--trigger", s(&f.path("trigger.pgm")),
        "--checkpoint", s(&f.path("nope.ckpt")),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let diverged = raediff(&[
        "train", "--in", s(&f.path("clean")), "--trigger", s(&f.path("trigger.pgm")),
        "--checkpoint", s(&f.path("d.ckpt")), "--iterations", "200", "--optimizer", "sgd",
        "--lr", "1e6", "--clip", "0", "--hidden", "16", "--timesteps", "60",
    ]);
    assert_eq!(diverged.status.code(), Some(3));

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_raediff"))
        .args(["evaluate", "--in", s(&f.path("clean")), "--against", s(&f.path("clean"))])
        .env("RAEDIFF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
}
