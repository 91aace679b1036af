//! Ablation grid: each cell is a settings variant trained over several
//! seeds; the table reports medians over seeds.

use std::sync::Mutex;

use bapn_core::metrics::format_table;
use bapn_core::rig::Orientation;

use crate::config::{InputSelection, Settings, Tasks};
use crate::data::Dataset;
use crate::train::{config_hash, train, RunRecord, TrainOptions};

/// One row of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub settings: Settings,
}

impl Cell {
    pub fn new(name: impl Into<String>, settings: Settings) -> Self {
        Self {
            name: name.into(),
            settings,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Successful runs, in seed order.
    pub records: Vec<RunRecord>,
    /// Failed seeds with their error text.
    pub errors: Vec<(u64, String)>,
}

/// Median of a nonempty sample; the mean of the middle pair for even sizes.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

impl CellResult {
    fn collect(&self, f: impl Fn(&RunRecord) -> Option<f64>) -> Option<f64> {
        median(&self.records.iter().filter_map(f).collect::<Vec<_>>())
    }

    pub fn median_miou(&self) -> Option<f64> {
        self.collect(|r| r.test_miou())
    }

    pub fn median_depth_rmse(&self) -> Option<f64> {
        self.collect(|r| r.test.as_ref()?.depth.as_ref().map(|d| d.rmse))
    }

    /// Median spectrogram MSE of the predicted pair at `degrees`.
    pub fn median_s3r_mse(&self, degrees: u32) -> Option<f64> {
        self.collect(|r| r.test.as_ref()?.s3r_per_pair.iter().find(|(d, _)| *d == degrees).map(|(_, m)| *m))
    }

    /// Median copy-reference spectrogram MSE at `degrees`.
    pub fn median_copy_mse(&self, degrees: u32) -> Option<f64> {
        self.collect(|r| {
            r.test
                .as_ref()?
                .baselines
                .copy_reference_per_pair
                .iter()
                .find(|(d, _)| *d == degrees)
                .map(|(_, m)| *m)
        })
    }
}

/// Cells covering every ablation axis, derived from `base`.
pub fn standard_grid(base: &Settings) -> Vec<Cell> {
    let with = |tasks: Tasks, inputs: InputSelection, targets: &[Orientation]| {
        let mut s = base.clone();
        s.model.tasks = tasks;
        s.model.inputs = inputs;
        s.model.target_pairs = targets.to_vec();
        s
    };
    let all = Orientation::TARGETS;
    let front = InputSelection::Pairs(vec![Orientation::Deg0]);
    let b = Tasks::SEMANTIC;
    let mut cells = vec![
        Cell::new("mono", with(b, InputSelection::Mono, &all)),
        Cell::new("B", with(b, front.clone(), &all)),
    ];
    for o in [Orientation::Deg90, Orientation::Deg180, Orientation::Deg270] {
        cells.push(Cell::new(
            format!("pair {}", o.degrees()),
            with(b, InputSelection::Pairs(vec![o]), &all),
        ));
    }
    cells.push(Cell::new(
        "pairs 0,180",
        with(b, InputSelection::Pairs(vec![Orientation::Deg0, Orientation::Deg180]), &all),
    ));
    cells.push(Cell::new(
        "pairs 0,90,180,270",
        with(b, InputSelection::Pairs(Orientation::ALL.to_vec()), &all),
    ));
    for label in ["B:D", "B:S", "B:SD"] {
        cells.push(Cell::new(label, with(Tasks::from_label(label).unwrap(), front.clone(), &all)));
    }
    let s = Tasks::from_label("B:S").unwrap();
    cells.push(Cell::new("B:S out 90", with(s, front.clone(), &[Orientation::Deg90])));
    cells.push(Cell::new(
        "B:S out 90,180",
        with(s, front, &[Orientation::Deg90, Orientation::Deg180]),
    ));
    cells
}

/// Trains and evaluates every cell for every seed. Up to `threads` runs
/// proceed at once, each with private model state; results come back in
/// cell order and seed order regardless of scheduling. A failing run is
/// recorded in its cell and the grid continues.
pub fn ablate(cells: &[Cell], seeds: &[u64], train_set: &Dataset, val: &Dataset, test: &Dataset, threads: usize) -> Vec<CellResult> {
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let slots: Vec<Mutex<Option<Result<RunRecord, String>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = {
                    let mut n = next.lock().unwrap();
                    let j = *n;
                    *n += 1;
                    j
                };
                let Some(&(c, seed)) = jobs.get(j) else { break };
                let s = &cells[c].settings;
                let mut exp = s.experiment.clone();
                exp.seed = seed;
                let result = train(&s.model, &exp, train_set, Some(val), Some(test), &TrainOptions::default())
                    .map(|o| o.record)
                    .map_err(|e| format!("{}: {e}", e.kind()));
                *slots[j].lock().unwrap() = Some(result);
            });
        }
    });
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            name: c.name.clone(),
            config_hash: config_hash(&c.settings.model, &c.settings.experiment),
            seeds: seeds.to_vec(),
            records: Vec::new(),
            errors: Vec::new(),
        })
        .collect();
    for ((c, seed), slot) in jobs.into_iter().zip(slots) {
        match slot.into_inner().unwrap().expect("every job ran") {
            Ok(r) => results[c].records.push(r),
            Err(e) => results[c].errors.push((seed, e)),
        }
    }
    results
}

fn cell(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{:.*}", digits, x * scale))
}

fn rows(results: &[CellResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["cell", "runs", "mIoU", "depth RMSE", "S3R MSE 90", "copy MSE 90", "errors"]
        .map(String::from)
        .to_vec();
    let body = results
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                format!("{}/{}", r.records.len(), r.seeds.len()),
                cell(r.median_miou(), 100.0, 2),
                cell(r.median_depth_rmse(), 1.0, 3),
                cell(r.median_s3r_mse(90), 1.0, 6),
                cell(r.median_copy_mse(90), 1.0, 6),
                r.errors
                    .iter()
                    .map(|(s, e)| format!("seed {s}: {e}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ]
        })
        .collect();
    (header, body)
}

/// Aligned text table of medians over seeds; mIoU in percent.
pub fn ablation_table(results: &[CellResult]) -> String {
    let (h, b) = rows(results);
    format_table(&h, &b)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV row per cell with the same columns as the text table plus the
/// config hash.
pub fn ablation_csv(results: &[CellResult]) -> String {
    let (mut h, b) = rows(results);
    h.push("config_hash".into());
    let mut out = h.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(",") + "\n";
    for (row, r) in b.into_iter().zip(results) {
        let mut row = row;
        row.push(r.config_hash.clone());
        out += &(row.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(",") + "\n");
    }
    out
}
