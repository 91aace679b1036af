//! Acceptance suite. Each test prints one `criterion N  PASS|FAIL  detail`
//! line and asserts the outcome.
//!
//! Criteria 1 to 4 and 10 run by default. Criteria 5 to 9 train the
//! ablation grid of `configs/acceptance.cfg` and are ignored by default:
//!
//!     cargo test -p bapn-cli --test acceptance -- --ignored --nocapture

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bapn_cli::checks::{self, CheckOutcome};
use bapn_core::scene::{GeneratorConfig, Split};
use bapn_model::ablate::{ablate, median, Cell, CellResult};
use bapn_model::config::{InputSelection, Settings, Tasks};
use bapn_model::data::Dataset;
use bapn_model::train::{train, TrainOptions};

const SEEDS: [u64; 3] = [0, 1, 2];

fn report(criterion: usize, passed: bool, detail: &str) {
    println!("criterion {criterion:>2}  {}  {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {criterion}: {detail}");
}

fn summarize(outcomes: &[CheckOutcome]) -> (bool, String) {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    let detail = if failed.is_empty() {
        outcomes
            .iter()
            .map(|o| format!("{} ({})", o.name, o.detail))
            .collect::<Vec<_>>()
            .join("; ")
    } else {
        format!("failing: {}", failed.join("; "))
    };
    (failed.is_empty(), detail)
}

#[test]
fn criterion_01_stft_round_trip() {
    let t0 = Instant::now();
    let o = checks::stft_round_trip(50, 2.0, 1);
    let secs = t0.elapsed().as_secs_f64();
    report(1, o.passed && secs < 10.0, &format!("{}, {secs:.1} s", o.detail));
}

#[test]
fn criterion_02_gradient_checks() {
    let t0 = Instant::now();
    let mut outcomes = checks::operator_gradients();
    let ops = outcomes.len();
    outcomes.push(checks::model_gradient(21));
    let secs = t0.elapsed().as_secs_f64();
    let (ok, failing) = summarize(&outcomes);
    let detail = if ok {
        format!(
            "{ops} ops within 1e-4 over 20 seeds each, full model {}, {secs:.0} s",
            outcomes[ops].detail
        )
    } else {
        failing
    };
    report(2, ok && secs < 300.0, &detail);
}

#[test]
fn criterion_03_oracles() {
    let outcomes = [
        checks::mode_background_oracle(100, 1),
        checks::sound_mask_oracle(100, 2),
        checks::difference_chain(4),
    ];
    let (ok, detail) = summarize(&outcomes);
    report(3, ok, &detail);
}

#[test]
fn criterion_04_simulator_physics() {
    let outcomes = [checks::itd_law(), checks::ild_law(), checks::rotation_equivariance(4)];
    let (ok, detail) = summarize(&outcomes);
    report(4, ok, &detail);
}

#[test]
fn criterion_10_determinism() {
    let mut s = Settings::default();
    s.data.0 = GeneratorConfig {
        scenes: 10,
        duration: 0.25,
        max_distance: 4.0,
        ..s.data.0.clone()
    };
    s.model.output_grid = (8, 16);
    s.model.base_channels = 2;
    s.model.aspp_filters = 8;
    s.model.dilation_scale = 0.1;
    s.model.decoder_channels = 4;
    s.model.tasks = Tasks::from_label("B:SD").unwrap();
    s.experiment.epochs = 2;
    s.experiment.seed = 5;
    let g = s.generator();
    let data = |split| Dataset::synthesize(&g, split).unwrap();
    let (tr, va, te) = (data(Split::Train), data(Split::Val), data(Split::Test));
    let run = || {
        let out = train(&s.model, &s.experiment, &tr, Some(&va), Some(&te), &TrainOptions::default()).unwrap();
        out.record.untimed_json()
    };
    let (a, b) = (run(), run());
    report(
        10,
        a == b,
        &format!("two runs of tasks B:SD, seed 5: {} bytes each, identical = {}", a.len(), a == b),
    );
}

/// Acceptance preset shipped with the repository.
fn preset() -> Settings {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.cfg");
    let s = Settings::from_text(&std::fs::read_to_string(&path).unwrap()).unwrap();
    s.validate().unwrap();
    s
}

struct Grid {
    results: Vec<CellResult>,
    secs: f64,
}

impl Grid {
    fn cell(&self, name: &str) -> &CellResult {
        let c = self.results.iter().find(|c| c.name == name).unwrap();
        assert!(c.errors.is_empty(), "{name}: {:?}", c.errors);
        c
    }
}

/// Trains mono, B, B:S, B:D and B:SD over three seeds once per test binary.
fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let base = preset();
        let g = base.generator();
        let data = |split| Dataset::synthesize(&g, split).unwrap();
        let (tr, va, te) = (data(Split::Train), data(Split::Val), data(Split::Test));
        assert_eq!((tr.len(), te.len()), (512, 64));
        let cell = |name: &str, tasks: &str, inputs: InputSelection| {
            let mut s = base.clone();
            s.model.tasks = Tasks::from_label(tasks).unwrap();
            s.model.inputs = inputs;
            Cell::new(name, s)
        };
        let front = InputSelection::Pairs(vec![bapn_core::rig::Orientation::Deg0]);
        let cells = vec![
            cell("mono", "B", InputSelection::Mono),
            cell("B", "B", front.clone()),
            cell("B:S", "B:S", front.clone()),
            cell("B:D", "B:D", front.clone()),
            cell("B:SD", "B:SD", front),
        ];
        let threads = std::env::var("BAPN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let t0 = Instant::now();
        let results = ablate(&cells, &SEEDS, &tr, &va, &te, threads);
        let secs = t0.elapsed().as_secs_f64();
        for c in &results {
            let mious: Vec<String> = c
                .records
                .iter()
                .map(|r| format!("{:.4}", r.test_miou().unwrap_or(f64::NAN)))
                .collect();
            println!(
                "grid {:5} mIoU per seed [{}] wall {:?}",
                c.name,
                mious.join(", "),
                c.records.iter().map(|r| r.wall_time_s.round()).collect::<Vec<_>>()
            );
        }
        Grid { results, secs }
    })
}

fn pts(x: f64) -> f64 {
    100.0 * x
}

#[test]
#[ignore = "trains the acceptance grid; run with --ignored"]
fn criterion_05_learning_smoke_test() {
    let g = grid();
    let r = &g.cell("B").records[0];
    let miou = r.test_miou().unwrap();
    let budget = Duration::from_secs(30 * 60).as_secs_f64();
    report(
        5,
        miou >= 0.50 && r.wall_time_s <= budget && r.epochs.len() <= 10,
        &format!(
            "B seed 0: test mIoU {miou:.4} after {} epochs in {:.0} s (grid {:.0} s)",
            r.epochs.len(),
            r.wall_time_s,
            g.secs
        ),
    );
}

#[test]
#[ignore = "trains the acceptance grid; run with --ignored"]
fn criterion_06_binaural_beats_mono() {
    let g = grid();
    let (b, m) = (g.cell("B").median_miou().unwrap(), g.cell("mono").median_miou().unwrap());
    report(
        6,
        pts(b - m) >= 5.0,
        &format!("median mIoU B {:.2} vs mono {:.2} points, gap {:.2}", pts(b), pts(m), pts(b - m)),
    );
}

#[test]
#[ignore = "trains the acceptance grid; run with --ignored"]
fn criterion_07_multi_task_benefit() {
    let g = grid();
    let b = g.cell("B").median_miou().unwrap();
    let others: Vec<(&str, f64)> = ["B:S", "B:D", "B:SD"]
        .iter()
        .map(|&n| (n, g.cell(n).median_miou().unwrap()))
        .collect();
    let sd = others[2].1;
    let passed = pts(sd) >= pts(b) - 0.5 && others.iter().any(|&(_, v)| v > b);
    let listed: Vec<String> = others.iter().map(|(n, v)| format!("{n} {:.2}", pts(*v))).collect();
    report(7, passed, &format!("median mIoU B {:.2}, {}", pts(b), listed.join(", ")));
}

#[test]
#[ignore = "trains the acceptance grid; run with --ignored"]
fn criterion_08_depth_beats_mean_baseline() {
    let g = grid();
    let c = g.cell("B:D");
    let model = c.median_depth_rmse().unwrap();
    let baseline = median(
        &c.records
            .iter()
            .filter_map(|r| Some(r.test.as_ref()?.baselines.mean_depth.as_ref()?.rmse))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    report(
        8,
        model <= 0.7 * baseline,
        &format!(
            "B:D median RMSE {model:.4} m vs mean-depth baseline {baseline:.4} m (ratio {:.3})",
            model / baseline
        ),
    );
}

#[test]
#[ignore = "trains the acceptance grid; run with --ignored"]
fn criterion_09_s3r_beats_copy_baseline() {
    let g = grid();
    let c = g.cell("B:S");
    let (model, copy) = (c.median_s3r_mse(90).unwrap(), c.median_copy_mse(90).unwrap());
    report(
        9,
        model < copy,
        &format!("B:S median 90 degree spectrogram MSE {model:.6} vs copy reference {copy:.6}"),
    );
}
