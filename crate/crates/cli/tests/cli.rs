use std::path::Path;
use std::process::{Command, Output};

use bss_core::audio_io::{read_wav, write_wav, TimeSignal, WavFormat};

fn bss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bss"))
        .args(args)
        .env_remove("BSS_SEED")
        .output()
        .expect("run bss")
}

fn ok(args: &[&str]) -> String {
    let out = bss(args);
    assert!(
        out.status.success(),
        "bss {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small, fast scenes: 3 microphones, 2 sources, 2 s.
fn simulate(dir: &Path, scenes: usize) {
    ok(&[
        "simulate", "--out", p(dir), "--scenes", &scenes.to_string(), "--seed", "5",
        "--microphones", "3", "--duration", "2", "--rir-length", "512",
    ]);
}

const FAST: [&str; 8] = [
    "--smm-stft-size", "512", "--iva-stft-size", "512", "--smm-iterations", "8", "--iva-iterations", "15",
];

#[test]
fn simulate_writes_scene_layout() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 2);
    for scene in ["scene_0000", "scene_0001"] {
        let d = tmp.path().join(scene);
        for f in ["mixture.wav", "image_0.wav", "image_1.wav", "source_0.wav", "source_1.wav", "noise.wav", "scene.json"] {
            assert!(d.join(f).exists(), "{scene}/{f}");
        }
        let mix = read_wav(d.join("mixture.wav")).unwrap();
        assert_eq!(mix.num_channels(), 3);
        assert_eq!(mix.num_samples(), 16000);
    }
    let a = std::fs::read(tmp.path().join("scene_0000/mixture.wav")).unwrap();
    let b = std::fs::read(tmp.path().join("scene_0001/mixture.wav")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn end_to_end_chain_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = tmp.path().join("scenes");
    simulate(&scenes, 1);
    let scene = scenes.join("scene_0000");
    let out = tmp.path().join("sep");
    let mixture = scene.join("mixture.wav");
    let mut args = vec!["separate", "--input", p(&mixture), "--out", p(&out), "--algorithm", "chain"];
    args.extend(FAST);
    args.extend(["--dump-intermediate", "stages"]);
    ok(&args);

    let input = read_wav(scene.join("mixture.wav")).unwrap();
    for k in 0..2 {
        let est = read_wav(out.join(format!("est_{k}.wav"))).unwrap();
        assert_eq!(est.num_channels(), 1);
        assert_eq!(est.num_samples(), input.num_samples());
    }
    assert!(!out.join("est_2.wav").exists());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["algorithm"], "chain");
    assert!(report["smm"]["iterations"].as_u64().unwrap() == 8);
    assert!(report["iva"]["singular_skips"].is_u64());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["smm-stft-size"], 512);
    assert_eq!(run["seed"], 0);
    for f in ["smm_masks.bsst", "beamformer.bsst", "smm_estimates.bsst", "smm_estimates.wav", "demixing.bsst"] {
        assert!(out.join("stages").join(f).exists(), "{f}");
    }

    let json = tmp.path().join("eval.json");
    let svg = tmp.path().join("cdf.svg");
    let stdout = ok(&["eval", "--est", p(&out), "--ref", p(&scene), "--json", p(&json), "--plot", p(&svg)]);
    assert!(stdout.contains("mean"));
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert!(eval["mean"].as_f64().unwrap().is_finite());
    assert!(eval["scenes"][0]["improvement"].as_f64().is_some());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn eval_of_oracle_images_hits_the_cap() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 2);
    let json = tmp.path().join("eval.json");
    ok(&["eval", "--est", p(tmp.path()), "--ref", p(tmp.path()), "--json", p(&json)]);
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(eval["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(eval["mean"].as_f64().unwrap(), 300.0);
}

#[test]
fn eval_with_mismatched_counts_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("s"), 1);
    let est = tmp.path().join("est");
    std::fs::create_dir(&est).unwrap();
    let image = read_wav(tmp.path().join("s/scene_0000/image_0.wav")).unwrap();
    let mono = TimeSignal::mono(image.channel_vec(0), image.sample_rate()).unwrap();
    write_wav(est.join("est_0.wav"), &mono, WavFormat::Float32).unwrap();
    let out = bss(&["eval", "--est", p(&est), "--ref", p(&tmp.path().join("s/scene_0000"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_run_config_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("s"), 1);
    let input = tmp.path().join("s/scene_0000/mixture.wav");
    let a = tmp.path().join("a");
    let mut args = vec!["separate", "--input", p(&input), "--out", p(&a), "--seed", "17"];
    args.extend(FAST);
    ok(&args);
    let b = tmp.path().join("b");
    ok(&["separate", "--config", p(&a.join("run.json")), "--out", p(&b), "--threads", "3"]);
    for k in 0..2 {
        let f = format!("est_{k}.wav");
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
    }
}

#[test]
fn bss_seed_is_the_fallback_seed() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("s"), 1);
    let input = tmp.path().join("s/scene_0000/mixture.wav");
    let out = tmp.path().join("o");
    let status = Command::new(env!("CARGO_BIN_EXE_bss"))
        .args(["separate", "--input", p(&input), "--out", p(&out), "--algorithm", "cacgmm"])
        .args(FAST)
        .env("BSS_SEED", "42")
        .status()
        .unwrap();
    assert!(status.success());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 42);
}

#[test]
fn mono_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("mono.wav");
    let x: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.01).sin() * 0.1).collect();
    write_wav(&input, &TimeSignal::mono(x, 8000).unwrap(), WavFormat::Float32).unwrap();
    let out = bss(&["separate", "--input", p(&input), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires at least two channels"));
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("s"), 1);
    let input = tmp.path().join("s/scene_0000/mixture.wav");
    let out = bss(&["separate", "--input", p(&input), "--out", p(&tmp.path().join("o")), "--smm-stft-size", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"no-such-key": 1}"#).unwrap();
    let out = bss(&["separate", "--config", p(&cfg), "--input", p(&input), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = bss(&[
        "separate", "--input", p(&input), "--out", p(&tmp.path().join("o")), "--dump-intermediate", "../escape",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_cell_sweep_writes_rows_in_grid_order() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = tmp.path().join("s");
    simulate(&scenes, 2);
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--scenes", p(&scenes), "--out", p(&out), "--algorithms", "overiva", "--stft-sizes", "512,256",
        "--iva-iterations", "10",
    ]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "algorithm,stft_size,shift,mean,median,cdf_at_7db,failures");
    assert!(lines[1].starts_with("overiva,512,128,"));
    assert!(lines[2].starts_with("overiva,256,64,"));

    // the CDF column is the fraction of per-scene means at or below 7 dB
    let cells: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    for (cell, line) in cells.as_array().unwrap().iter().zip(&lines[1..]) {
        let means: Vec<f64> = cell["scenes"].as_array().unwrap().iter().map(|s| s["mean"].as_f64().unwrap()).collect();
        let frac = means.iter().filter(|&&m| m <= 7.0).count() as f64 / means.len() as f64;
        let col: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!((col - frac).abs() < 1e-4);
        assert_eq!(cell["failures"], 0);
    }
}
