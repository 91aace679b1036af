use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use bapn_core::io::{read_wav, write_wav};
use bapn_core::rig::Orientation;
use bapn_core::scene::{GeneratorConfig, Manifest, Scene, SceneRecord, SourceClass, SourceSpec, Split};
use bapn_model::config::Settings;
use serde_json::Value;

/// Small enough for a one-core CI box: 0.25 s clips on an 8x16 grid and a
/// narrow network.
const TINY: &str = "\
scenes = 10
duration = 0.25
max_distance = 4
output_grid = 8x16
base_channels = 2
aspp_filters = 8
dilation_scale = 0.1
decoder_channels = 4
epochs = 1
lr = 0.001
";

fn bapn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bapn"))
        .args(args)
        .current_dir(cwd)
        .env("BAPN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?}: {e}"))
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn gen_tiny(dir: &Path, extra: &str) -> PathBuf {
    let cfg = tiny_config(dir, extra);
    let data = dir.join("data");
    ok(&bapn(
        &["gen", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()],
        dir,
    ));
    data
}

/// Relative path to bytes for every file under `root`.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_every_key_with_its_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = bapn(&["--help"], dir.path());
    ok(&o);
    let help = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen", "labels", "train", "eval", "infer-s3r", "ablate", "selftest"] {
        assert!(help.contains(sub), "{sub} missing");
    }
    for line in Settings::help_table().lines() {
        assert!(help.contains(line), "help lacks {line:?}");
    }
    assert!(help.contains("BAPN_THREADS"));
}

#[test]
fn gen_is_deterministic_and_stays_inside_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "scenes = 4\n");
    let run = |out: &str| ok(&bapn(&["gen", "--config", cfg.to_str().unwrap(), "--out", out], dir.path()));
    run("a");
    run("b");
    let a = snapshot(&dir.path().join("a"));
    assert_eq!(a, snapshot(&dir.path().join("b")));
    let ids: usize = Split::ALL
        .iter()
        .map(|&s| Manifest::load(&dir.path().join("a"), s).unwrap().scene_ids.len())
        .sum();
    assert_eq!(ids, 4);
    let mut top: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["a", "b", "tiny.cfg"]);
    // Running again into an existing directory leaves identical contents.
    run("a");
    assert_eq!(a, snapshot(&dir.path().join("a")));
}

#[test]
fn gen_splits_one_hundred_scenes_80_10_10() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "scenes = 100\nduration = 0.05\n");
    let counts: Vec<usize> = Split::ALL
        .iter()
        .map(|&s| Manifest::load(&data, s).unwrap().scene_ids.len())
        .collect();
    assert_eq!(counts, [80, 10, 10]);
}

#[test]
fn front_source_writes_identical_front_channels() {
    let dir = tempfile::tempdir().unwrap();
    let source = SourceSpec {
        class: SourceClass::Car,
        azimuth: 0.0,
        distance: 3.0,
        seed: 9,
        gain: 1.0,
    };
    let mut rec = SceneRecord::synthesize(
        &GeneratorConfig {
            scenes: 1,
            duration: 0.25,
            ..GeneratorConfig::default()
        },
        0,
    )
    .unwrap();
    let scene = Scene::new(vec![source], 0.0, 0.25, 3).unwrap();
    let clip = bapn_core::scene::render_rig(&scene, &bapn_core::rig::RigConfig::default(), 16_000).unwrap();
    rec.scene = scene;
    rec.pairs = clip.pairs.map(|(l, r)| [l.to_f32(), r.to_f32()]);
    rec.write(dir.path()).unwrap();
    let wav = read_wav(&dir.path().join("audio_pair0.wav")).unwrap();
    let bytes = |c: &[f32]| c.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
    assert_eq!(bytes(&wav.channels[0]), bytes(&wav.channels[1]));
}

#[test]
fn unknown_override_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bapn(&["gen", "--set", "bogus=1", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "Config");
    let o = bapn(&["gen", "--set", "max_distance=100", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_on_missing_checkpoint_exits_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "");
    let o = bapn(
        &["eval", "--data", data.to_str().unwrap(), "--checkpoint", "nope.ckpt", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let v = error_json(&o);
    assert_eq!(v["error"], "CheckpointCorrupt");
    assert_eq!(v["command"], "eval");
}

#[test]
fn train_missing_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = bapn(&["train", "--data", "absent", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "DataMissing");
}

#[test]
fn train_smoke_then_eval_and_selftest_on_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    // 10 scenes split 8/1/1; 50 epochs of 4 steps make 200 steps.
    let data = gen_tiny(dir.path(), "epochs = 50\npatience = 50\n");
    let cfg = dir.path().join("tiny.cfg");
    let t0 = Instant::now();
    let o = bapn(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    );
    ok(&o);
    assert!(t0.elapsed() < Duration::from_secs(300), "took {:?}", t0.elapsed());
    let run = dir.path().join("run");
    let record: Value = serde_json::from_str(&fs::read_to_string(run.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["steps"], 200);
    assert_eq!(record["epochs"].as_array().unwrap().len(), 50);
    for f in ["best.ckpt", "best.cfg", "last.ckpt", "loss.svg", "settings.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let svg = fs::read_to_string(run.join("loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));

    let ckpt = run.join("best.ckpt");
    let eval = |out: &str| {
        ok(&bapn(
            &[
                "eval",
                "--data",
                data.to_str().unwrap(),
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--out",
                out,
            ],
            dir.path(),
        ));
        fs::read(dir.path().join(out).join("eval_test.json")).unwrap()
    };
    assert_eq!(eval("e1"), eval("e2"));

    let o = bapn(&["selftest", "--checkpoint", ckpt.to_str().unwrap(), "--out", "st"], dir.path());
    ok(&o);
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let o = bapn(&["selftest", "--checkpoint", ckpt.to_str().unwrap(), "--out", "st2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let report = String::from_utf8_lossy(&o.stdout);
    let failing: Vec<&str> = report.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{report}");
    assert!(failing[0].contains("checkpoint"));
    let passing = report.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(passing >= 25, "{report}");
    assert!(report.contains("gradients / conv2d") && report.contains("gradients / complex_mask_mse"));
}

#[test]
fn ablate_minimal_grid_emits_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "");
    let cfg = dir.path().join("tiny.cfg");
    let o = bapn(
        &[
            "ablate",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--seeds",
            "1",
            "--cell",
            "mono",
            "--cell",
            "B",
            "--out",
            "abl",
        ],
        dir.path(),
    );
    ok(&o);
    let csv = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[1].starts_with("mono,1/1,") && rows[2].starts_with("B,1/1,"));
    assert!(dir.path().join("abl/ablation_miou.svg").exists());
    let o = bapn(
        &["ablate", "--data", data.to_str().unwrap(), "--cell", "nonsense", "--out", "abl2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "Usage");
}

#[test]
fn labels_recover_the_moving_object() {
    let dir = tempfile::tempdir().unwrap();
    let stack = dir.path().join("stack");
    fs::create_dir(&stack).unwrap();
    // Teacher ids: 13 car on a static 7 background, visible in one frame.
    let bg = bapn_core::grid::Grid::filled(4, 6, 7u8);
    let mut moving = bg.clone();
    moving.set(1, 2, 13);
    for (i, g) in [&bg, &bg, &moving, &bg].iter().enumerate() {
        bapn_core::io::write_pgm(&stack.join(format!("f{i}.pgm")), g).unwrap();
    }
    let classes = dir.path().join("classes.json");
    fs::write(&classes, r#"{"7": "road", "13": "car"}"#).unwrap();
    ok(&bapn(
        &[
            "labels",
            "--stack",
            stack.to_str().unwrap(),
            "--classes",
            classes.to_str().unwrap(),
            "--out",
            "lab",
        ],
        dir.path(),
    ));
    let lab = dir.path().join("lab");
    assert_eq!(bapn_core::io::read_pgm(&lab.join("background.pgm")).unwrap(), bg);
    let target = bapn_core::io::read_pgm(&lab.join("targets/f2.pgm")).unwrap();
    assert_eq!(target.at(1, 2), SourceClass::Car.id());
    assert_eq!(target.as_slice().iter().filter(|&&v| v != 0).count(), 1);
    let still = bapn_core::io::read_pgm(&lab.join("targets/f0.pgm")).unwrap();
    assert!(still.as_slice().iter().all(|&v| v == 0));
}

#[test]
fn infer_s3r_on_symmetric_scenes_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "tasks = semantic,s3r\nepochs = 3\n");
    // Make every 90 degree pair a copy of the front pair, so the correct
    // difference signal is zero.
    for split in Split::ALL {
        for id in Manifest::load(&data, split).unwrap().scene_ids {
            let scene = data.join(split.name()).join(&id);
            fs::copy(scene.join("audio_pair0.wav"), scene.join("audio_pair90.wav")).unwrap();
        }
    }
    let cfg = dir.path().join("tiny.cfg");
    ok(&bapn(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    ));
    let test_id = &Manifest::load(&data, Split::Test).unwrap().scene_ids[0];
    let input = data.join("test").join(test_id).join("audio_pair0.wav");
    let ckpt = dir.path().join("run/best.ckpt");
    let o = bapn(
        &[
            "infer-s3r",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--out",
            "inf",
        ],
        dir.path(),
    );
    ok(&o);
    let src = read_wav(&input).unwrap();
    for o in Orientation::TARGETS {
        let pred = read_wav(&dir.path().join(format!("inf/pred_{}.wav", o.degrees()))).unwrap();
        assert_eq!(pred.sample_rate, src.sample_rate);
        assert_eq!(pred.channels.len(), 2);
        assert_eq!(pred.channels[0].len(), src.channels[0].len());
    }
    let pred = read_wav(&dir.path().join("inf/pred_90.wav")).unwrap();
    for ch in 0..2 {
        let (mut sig, mut err) = (0.0f64, 0.0f64);
        for (a, b) in src.channels[ch].iter().zip(&pred.channels[ch]) {
            sig += (*a as f64).powi(2);
            err += (*a as f64 - *b as f64).powi(2);
        }
        let snr = 10.0 * (sig / err.max(1e-300)).log10();
        assert!(snr >= 30.0, "channel {ch}: {snr:.1} dB");
    }
}

#[test]
fn infer_s3r_rejects_silence_and_mono() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "tasks = semantic,s3r\n");
    let cfg = dir.path().join("tiny.cfg");
    ok(&bapn(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    ));
    let ckpt = dir.path().join("run/best.ckpt");
    let silent = dir.path().join("silent.wav");
    let zeros = vec![0.0f32; 4000];
    write_wav(&silent, 16_000, &[&zeros, &zeros]).unwrap();
    let o = bapn(
        &[
            "infer-s3r",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            silent.to_str().unwrap(),
            "--out",
            "a",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "SilentInput");
    let mono = dir.path().join("mono.wav");
    write_wav(&mono, 16_000, &[&zeros]).unwrap();
    let o = bapn(
        &[
            "infer-s3r",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            mono.to_str().unwrap(),
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "BadAudioFormat");
}

#[test]
fn infer_s3r_fits_other_lengths_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path(), "tasks = semantic,s3r\n");
    let cfg = dir.path().join("tiny.cfg");
    ok(&bapn(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    ));
    let test_id = &Manifest::load(&data, Split::Test).unwrap().scene_ids[0];
    let src = read_wav(&data.join("test").join(test_id).join("audio_pair0.wav")).unwrap();
    let short = dir.path().join("short.wav");
    write_wav(&short, src.sample_rate, &[&src.channels[0][..3000], &src.channels[1][..3000]]).unwrap();
    let ckpt = dir.path().join("run/best.ckpt");
    let o = bapn(
        &[
            "infer-s3r",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            short.to_str().unwrap(),
            "--out",
            "inf",
        ],
        dir.path(),
    );
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let pred = read_wav(&dir.path().join("inf/pred_180.wav")).unwrap();
    assert_eq!(pred.channels[0].len(), src.channels[0].len());
}
