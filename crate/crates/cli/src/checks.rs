//! Fixture checks shared by `bapn selftest` and the acceptance suite: STFT
//! round trips, gradient checks, label and reconstruction oracles, simulator
//! physics and checkpoint integrity.

use std::collections::BTreeSet;
use std::path::Path;

use bapn_autodiff::suite::{op_checks, OP_SEEDS, OP_TOLERANCE};
use bapn_core::dsp::{reconstruct_target, DifferenceSignal, StftPlan, Waveform};
use bapn_core::grid::Grid;
use bapn_core::pseudo::{mode_background, sound_mask, LabelStack};
use bapn_core::rig::{Ear, Orientation, RigConfig};
use bapn_core::scene::{generate_scene, render_binaural, render_pair, render_rig, GeneratorConfig, Scene, SourceClass, SourceSpec};
use bapn_model::check::{full_model_grad_check, tiny_config, MODEL_TOLERANCE};
use bapn_model::Model;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 512;
pub const HOP: usize = 160;
/// Minimum interior SNR for perfect-reconstruction chains, dB.
pub const RECONSTRUCTION_SNR_DB: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(group: &'static str, name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            group,
            name: name.into(),
            passed,
            detail,
        }
    }

    fn failed(group: &'static str, name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self::new(group, name, false, format!("error: {err}"))
    }
}

/// SNR of `estimate` against `reference`, skipping `edge` samples at each end.
pub fn interior_snr_db(reference: &[f64], estimate: &[f64], edge: usize) -> f64 {
    let n = reference.len().min(estimate.len());
    let (mut sig, mut err) = (0.0, 0.0);
    for t in edge..n.saturating_sub(edge) {
        sig += reference[t] * reference[t];
        err += (reference[t] - estimate[t]).powi(2);
    }
    10.0 * (sig / err.max(1e-300)).log10()
}

/// STFT then ISTFT of `clips` random clips of `seconds` each; passes when
/// every interior SNR reaches 60 dB.
pub fn stft_round_trip(clips: usize, seconds: f64, seed: u64) -> CheckOutcome {
    let name = format!("stft round trip ({clips} clips)");
    let run = || -> Result<f64, bapn_core::dsp::DspError> {
        let plan = StftPlan::new(WINDOW, HOP)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = (seconds * SAMPLE_RATE as f64) as usize;
        let mut worst = f64::INFINITY;
        for _ in 0..clips {
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Waveform::new(x, SAMPLE_RATE)?;
            let back = plan.inverse(&plan.forward(&w)?)?;
            worst = worst.min(interior_snr_db(w.samples(), back.samples(), WINDOW));
        }
        Ok(worst)
    };
    match run() {
        Ok(snr) => CheckOutcome::new("dsp", name, snr >= RECONSTRUCTION_SNR_DB, format!("min interior SNR {snr:.1} dB")),
        Err(e) => CheckOutcome::failed("dsp", name, e),
    }
}

/// One outcome per registered operator, each over the standard seed count.
pub fn operator_gradients() -> Vec<CheckOutcome> {
    op_checks()
        .into_iter()
        .map(|c| match c.max_error(OP_SEEDS) {
            Ok(e) => CheckOutcome::new(
                "gradients",
                c.name,
                e <= OP_TOLERANCE,
                format!("max relative error {e:.2e} over {OP_SEEDS} seeds"),
            ),
            Err(err) => CheckOutcome::failed("gradients", c.name, err),
        })
        .collect()
}

pub fn model_gradient(seed: u64) -> CheckOutcome {
    let name = "full tiny model";
    match full_model_grad_check(seed) {
        Ok(e) => CheckOutcome::new("gradients", name, e <= MODEL_TOLERANCE, format!("max relative error {e:.2e}")),
        Err(err) => CheckOutcome::failed("gradients", name, err),
    }
}

/// Most frequent value; ties go to the smallest.
fn histogram_mode(history: &[u8]) -> u8 {
    let mut counts = std::collections::BTreeMap::new();
    for &v in history {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|&(_, c)| c == best).map_or(0, |(v, _)| v)
}

fn random_stack(rng: &mut ChaCha8Rng) -> LabelStack {
    let (frames, rows, cols) = (rng.random_range(1..12), rng.random_range(1..10), rng.random_range(1..16));
    let classes = rng.random_range(1..6u8);
    LabelStack::new(
        (0..frames)
            .map(|_| Grid::from_fn(rows, cols, |_, _| rng.random_range(0..classes)))
            .collect(),
    )
    .expect("nonempty stack")
}

/// Background mode against a per-cell histogram on `stacks` random stacks.
pub fn mode_background_oracle(stacks: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..stacks {
        let stack = random_stack(&mut rng);
        let out = mode_background(&stack);
        let (rows, cols) = stack.shape();
        for r in 0..rows {
            for c in 0..cols {
                let history: Vec<u8> = stack.frames().iter().map(|f| f.at(r, c)).collect();
                mismatches += usize::from(out.at(r, c) != histogram_mode(&history));
            }
        }
    }
    CheckOutcome::new(
        "oracles",
        format!("mode background ({stacks} stacks)"),
        mismatches == 0,
        format!("{mismatches} mismatching cells"),
    )
}

/// Sound mask against set algebra on cell indices: target cells minus
/// cells equal to the background.
pub fn sound_mask_oracle(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let stack = random_stack(&mut rng);
        let bg = mode_background(&stack);
        let current = &stack.frames()[rng.random_range(0..stack.len())];
        let targets: BTreeSet<u8> = (0..6u8).filter(|_| rng.random::<bool>()).collect();
        let cells = current.as_slice();
        let in_target: BTreeSet<usize> = (0..cells.len()).filter(|&i| targets.contains(&cells[i])).collect();
        let static_cells: BTreeSet<usize> = (0..cells.len()).filter(|&i| cells[i] == bg.as_slice()[i]).collect();
        let want: BTreeSet<usize> = in_target.difference(&static_cells).copied().collect();
        match sound_mask(current, &bg, &targets) {
            Ok(m) => {
                let got: BTreeSet<usize> = m
                    .cells()
                    .as_slice()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == 1)
                    .map(|(i, _)| i)
                    .collect();
                mismatches += usize::from(got != want);
            }
            Err(_) => mismatches += 1,
        }
    }
    CheckOutcome::new(
        "oracles",
        format!("sound mask ({cases} cases)"),
        mismatches == 0,
        format!("{mismatches} mismatching masks"),
    )
}

/// Difference signal, STFT, then reconstruction against the rendered
/// rotated channels of `scenes` generated scenes.
pub fn difference_chain(scenes: usize) -> CheckOutcome {
    let name = format!("difference reconstruction ({scenes} scenes)");
    let cfg = GeneratorConfig {
        duration: 1.0,
        max_sources: 3,
        ambient_level: 0.005,
        ..GeneratorConfig::default()
    };
    let run = || -> Result<f64, Box<dyn std::error::Error>> {
        let plan = StftPlan::new(WINDOW, HOP)?;
        let mut worst = f64::INFINITY;
        for index in 0..scenes {
            let scene = generate_scene(&cfg, index);
            let clip = render_rig(&scene, &cfg.rig, cfg.sample_rate)?;
            for ear in [Ear::Left, Ear::Right] {
                let reference = clip.channel(Orientation::Deg0, ear);
                for o in Orientation::TARGETS {
                    let target = clip.channel(o, ear);
                    let diff = DifferenceSignal::between(reference, target, o, ear)?;
                    let rebuilt = reconstruct_target(reference, &plan.forward(&diff.wave)?)?;
                    worst = worst.min(interior_snr_db(target.samples(), rebuilt.samples(), WINDOW));
                }
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(snr) => CheckOutcome::new(
            "oracles",
            name,
            snr >= RECONSTRUCTION_SNR_DB,
            format!("min interior SNR {snr:.1} dB"),
        ),
        Err(e) => CheckOutcome::failed("oracles", name, e),
    }
}

fn single_source(class: SourceClass, azimuth: f64) -> Scene {
    let source = SourceSpec {
        class,
        azimuth,
        distance: 3.0,
        seed: 5,
        gain: 1.0,
    };
    Scene::new(vec![source], 0.0, 0.5, 1).expect("valid single-source scene")
}

/// Integer lag of `right` behind `left` maximizing the cross-correlation.
pub fn xcorr_lag(left: &[f64], right: &[f64], max_lag: i64) -> i64 {
    let n = left.len() as i64;
    let score = |lag: i64| -> f64 {
        (0..n)
            .filter(|t| t + lag >= 0 && t + lag < n)
            .map(|t| left[t as usize] * right[(t + lag) as usize])
            .sum()
    };
    (-max_lag..=max_lag).max_by(|a, b| score(*a).total_cmp(&score(*b))).unwrap_or(0)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

pub const PHYSICS_ANGLES: [f64; 5] = [-90.0, -45.0, 0.0, 45.0, 90.0];

/// Measured interaural lag per angle and class is within one sample of
/// `ear_separation·sinθ/c·sr`.
pub fn itd_law() -> CheckOutcome {
    let rig = RigConfig::default();
    let mut worst = 0.0f64;
    for theta in PHYSICS_ANGLES {
        for class in SourceClass::ALL {
            match render_binaural(&single_source(class, theta.rem_euclid(360.0)), 0.0, &rig, SAMPLE_RATE) {
                Ok((l, r)) => {
                    let expected = rig.ear_separation * theta.to_radians().sin() / rig.speed_of_sound * SAMPLE_RATE as f64;
                    worst = worst.max((xcorr_lag(l.samples(), r.samples(), 20) as f64 - expected).abs());
                }
                Err(e) => return CheckOutcome::failed("physics", "ITD law", e),
            }
        }
    }
    CheckOutcome::new("physics", "ITD law", worst <= 1.0, format!("max lag error {worst:.2} samples"))
}

/// Left/right RMS ratio per angle and class is within 5% of
/// `(1 + 0.35 sinθ)/(1 − 0.35 sinθ)`.
pub fn ild_law() -> CheckOutcome {
    let rig = RigConfig::default();
    let mut worst = 0.0f64;
    for theta in PHYSICS_ANGLES {
        for class in SourceClass::ALL {
            match render_binaural(&single_source(class, theta.rem_euclid(360.0)), 0.0, &rig, SAMPLE_RATE) {
                Ok((l, r)) => {
                    let s = theta.to_radians().sin();
                    let model = (1.0 + 0.35 * s) / (1.0 - 0.35 * s);
                    worst = worst.max((rms(l.samples()) / rms(r.samples()) / model - 1.0).abs());
                }
                Err(e) => return CheckOutcome::failed("physics", "ILD law", e),
            }
        }
    }
    CheckOutcome::new("physics", "ILD law", worst < 0.05, format!("max ratio error {:.2}%", worst * 100.0))
}

/// Rotating the scene by a quarter turn and the rig with it reproduces
/// every pair bit for bit.
pub fn rotation_equivariance(scenes: usize) -> CheckOutcome {
    let cfg = GeneratorConfig {
        duration: 0.25,
        max_sources: 3,
        ..GeneratorConfig::default()
    };
    let rig = RigConfig::default();
    let mut mismatches = 0;
    for index in 0..scenes {
        let scene = generate_scene(&cfg, index);
        for k in 1..4 {
            let delta = Orientation::ALL[k];
            for (base, &o) in Orientation::ALL.iter().enumerate() {
                let turned = Orientation::ALL[(base + k) % 4];
                let a = render_pair(&scene.rotated(delta), turned, &rig, cfg.sample_rate);
                let b = render_pair(&scene, o, &rig, cfg.sample_rate);
                mismatches += usize::from(!matches!((a, b), (Ok(a), Ok(b)) if a == b));
            }
        }
    }
    CheckOutcome::new(
        "physics",
        format!("rotation equivariance ({scenes} scenes)"),
        mismatches == 0,
        format!("{mismatches} differing pairs"),
    )
}

/// Loads `path` when given; otherwise saves a tiny model under `scratch`,
/// reloads it and compares parameters.
pub fn checkpoint(path: Option<&Path>, scratch: &Path) -> CheckOutcome {
    let name = "checkpoint round trip";
    if let Some(p) = path {
        return match Model::load(p) {
            Ok(m) => CheckOutcome::new(
                "checkpoint",
                name,
                true,
                format!("{} loads ({} parameters)", p.display(), m.num_parameters()),
            ),
            Err(e) => CheckOutcome::failed("checkpoint", name, format!("{}: {e}", e.kind())),
        };
    }
    let run = || -> Result<bool, bapn_model::ModelError> {
        let model = Model::new(tiny_config(), 3)?;
        let file = scratch.join("selftest.ckpt");
        model.save(&file)?;
        let back = Model::load(&file)?;
        Ok(back == model)
    };
    match run() {
        Ok(same) => CheckOutcome::new(
            "checkpoint",
            name,
            same,
            if same {
                "bitwise identical".into()
            } else {
                "reloaded model differs".into()
            },
        ),
        Err(e) => CheckOutcome::failed("checkpoint", name, format!("{}: {e}", e.kind())),
    }
}

/// Every fixture check in report order.
pub fn all(checkpoint_path: Option<&Path>, scratch: &Path) -> Vec<CheckOutcome> {
    let mut out = vec![stft_round_trip(50, 2.0, 0)];
    out.extend(operator_gradients());
    out.push(model_gradient(21));
    out.push(mode_background_oracle(100, 1));
    out.push(sound_mask_oracle(100, 2));
    out.push(difference_chain(4));
    out.push(itd_law());
    out.push(ild_law());
    out.push(rotation_equivariance(4));
    out.push(checkpoint(checkpoint_path, scratch));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_mode_breaks_ties_low() {
        assert_eq!(histogram_mode(&[3, 1, 3, 1, 2]), 1);
        assert_eq!(histogram_mode(&[4]), 4);
    }

    #[test]
    fn snr_of_exact_copy_is_huge() {
        let x = [0.5, -0.25, 1.0, 0.0];
        assert!(interior_snr_db(&x, &x, 0) > 1000.0);
    }

    #[test]
    fn xcorr_finds_a_known_shift() {
        let l: Vec<f64> = (0..200).map(|t| ((t * 37 % 11) as f64) - 5.0).collect();
        let mut r = vec![0.0; 3];
        r.extend_from_slice(&l[..197]);
        assert_eq!(xcorr_lag(&l, &r, 10), 3);
    }
}
