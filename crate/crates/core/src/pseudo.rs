//! Sound-making object collection: per-cell mode background over a label
//! sequence, the moving-object mask, and remapping to compact training ids.
//!
//! The mode runs on label maps rather than on raw frames. Teachers may use
//! any class table; remapping to {1: car, 2: motorcycle, 3: train} happens
//! only in [`to_training_target`].

use crate::grid::Grid;
use crate::io::{read_pgm, write_pgm, IoError};
use crate::scene::{LabelGrid, SourceClass};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Frames per location when nothing else is configured.
pub const DEFAULT_STACK_LEN: usize = 150;

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("label stack is empty")]
    EmptyStack,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {0} is masked but not a target class")]
    UnknownClass(u8),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// A sequence of equally shaped label maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStack {
    frames: Vec<LabelGrid>,
}

impl LabelStack {
    pub fn new(frames: Vec<LabelGrid>) -> Result<Self, PseudoError> {
        let first = frames.first().ok_or(PseudoError::EmptyStack)?;
        if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(PseudoError::ShapeMismatch(format!(
                "frame {:?} vs {:?}",
                bad.shape(),
                first.shape()
            )));
        }
        Ok(Self { frames })
    }

    /// Reads one P5 PGM per frame.
    pub fn read_pgms<P: AsRef<Path>>(paths: &[P]) -> Result<Self, PseudoError> {
        let frames = paths.iter().map(|p| read_pgm(p.as_ref())).collect::<Result<Vec<_>, _>>()?;
        Self::new(frames)
    }

    pub fn frames(&self) -> &[LabelGrid] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }
}

/// Binary grid: 1 marks a sound-making object.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundMask(pub Grid<u8>);

impl SoundMask {
    pub fn cells(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v == 1).count()
    }

    /// Writes the mask as a P5 PGM with 0 and 255.
    pub fn write_pgm(&self, path: &Path) -> Result<(), IoError> {
        write_pgm(path, &self.0.map(|&v| if v == 1 { 255 } else { 0 }))
    }

    pub fn read_pgm(path: &Path) -> Result<Self, IoError> {
        Ok(SoundMask(read_pgm(path)?.map(|&v| u8::from(v >= 128))))
    }
}

/// Teacher class ids to names, stored as JSON `{"id": "name"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassTable(pub BTreeMap<u8, String>);

impl ClassTable {
    /// The simulator's own table: 0 background, then the three targets.
    pub fn simulator() -> Self {
        let mut m = BTreeMap::new();
        m.insert(0, "background".to_string());
        for c in SourceClass::ALL {
            m.insert(c.id(), c.name().to_string());
        }
        ClassTable(m)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let json = serde_json::to_string_pretty(self).expect("class table serializes");
        fs::write(path, json).map_err(|e| IoError::at(path, e))
    }

    /// Teacher id to target class, for ids whose name is a target.
    pub fn target_of(&self, id: u8) -> Option<SourceClass> {
        self.0.get(&id).and_then(|n| SourceClass::from_name(n))
    }

    /// Teacher ids that name a sound-making target class.
    pub fn targets(&self) -> BTreeSet<u8> {
        self.0.keys().copied().filter(|&id| self.target_of(id).is_some()).collect()
    }
}

/// Per-cell most frequent label; ties go to the smallest id.
pub fn mode_background(stack: &LabelStack) -> LabelGrid {
    let (rows, cols) = stack.shape();
    let mut out = Grid::filled(rows, cols, 0u8);
    let mut hist = [0u32; 256];
    for i in 0..rows * cols {
        hist.fill(0);
        for f in stack.frames() {
            hist[f.as_slice()[i] as usize] += 1;
        }
        // `max_by_key` keeps the last maximum; scanning ids downward makes
        // that the smallest id.
        let best = (0..256).rev().max_by_key(|&id| hist[id]).unwrap();
        out.as_mut_slice()[i] = best as u8;
    }
    out
}

/// 1 where the current label is a target class and differs from the
/// background label.
pub fn sound_mask(current: &LabelGrid, background: &LabelGrid, targets: &BTreeSet<u8>) -> Result<SoundMask, PseudoError> {
    if current.shape() != background.shape() {
        return Err(PseudoError::ShapeMismatch(format!(
            "current {:?} vs background {:?}",
            current.shape(),
            background.shape()
        )));
    }
    let cells = current
        .as_slice()
        .iter()
        .zip(background.as_slice())
        .map(|(&y, &bg)| u8::from(targets.contains(&y) && y != bg))
        .collect();
    Ok(SoundMask(Grid::from_vec(current.rows(), current.cols(), cells).expect("sized")))
}

/// Masked cells take their compact target id, the rest become background.
pub fn to_training_target(mask: &SoundMask, current: &LabelGrid, table: &ClassTable) -> Result<LabelGrid, PseudoError> {
    if mask.0.shape() != current.shape() {
        return Err(PseudoError::ShapeMismatch(format!(
            "mask {:?} vs labels {:?}",
            mask.0.shape(),
            current.shape()
        )));
    }
    let mut out = Vec::with_capacity(current.as_slice().len());
    for (&m, &y) in mask.0.as_slice().iter().zip(current.as_slice()) {
        out.push(if m == 1 {
            table.target_of(y).ok_or(PseudoError::UnknownClass(y))?.id()
        } else {
            0
        });
    }
    Ok(Grid::from_vec(current.rows(), current.cols(), out).expect("sized"))
}

/// Full chain over a stack: background by mode, then one training target
/// per frame.
pub fn pseudo_labels(stack: &LabelStack, table: &ClassTable) -> Result<Vec<LabelGrid>, PseudoError> {
    let background = mode_background(stack);
    let targets = table.targets();
    stack
        .frames()
        .iter()
        .map(|f| to_training_target(&sound_mask(f, &background, &targets)?, f, table))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, v: &[u8]) -> LabelGrid {
        Grid::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    /// Cityscapes-like teacher table.
    fn street_table() -> ClassTable {
        let mut m = BTreeMap::new();
        for (id, name) in [(0, "road"), (10, "sky"), (13, "car"), (16, "train"), (17, "motorcycle")] {
            m.insert(id, name.to_string());
        }
        ClassTable(m)
    }

    fn histogram_mode(values: &[u8]) -> u8 {
        let mut best = (0usize, u8::MAX);
        for &v in values {
            let n = values.iter().filter(|&&x| x == v).count();
            if n > best.0 || (n == best.0 && v < best.1) {
                best = (n, v);
            }
        }
        best.1
    }

    #[test]
    fn mode_of_identical_frames_is_that_frame() {
        let f = grid(2, 2, &[0, 3, 7, 1]);
        let stack = LabelStack::new(vec![f.clone(); 5]).unwrap();
        assert_eq!(mode_background(&stack), f);
    }

    #[test]
    fn mode_majority_and_tie_break() {
        let stack = LabelStack::new(vec![grid(1, 2, &[1, 5]), grid(1, 2, &[1, 2]), grid(1, 2, &[2, 9])]).unwrap();
        // Cell 0: {1,1,2} -> 1. Cell 1: {5,2,9} all tied -> 2.
        assert_eq!(mode_background(&stack), grid(1, 2, &[1, 2]));
    }

    #[test]
    fn empty_and_ragged_stacks_are_rejected() {
        assert!(matches!(LabelStack::new(vec![]), Err(PseudoError::EmptyStack)));
        assert!(matches!(
            LabelStack::new(vec![grid(1, 2, &[0, 0]), grid(2, 1, &[0, 0])]),
            Err(PseudoError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn parked_car_moving_car_and_sky() {
        let t = street_table();
        let targets = t.targets();
        assert_eq!(targets, BTreeSet::from([13, 16, 17]));
        // Cells: parked car, moving car over road, sky over road.
        let current = grid(1, 3, &[13, 13, 10]);
        let background = grid(1, 3, &[13, 0, 0]);
        let mask = sound_mask(&current, &background, &targets).unwrap();
        assert_eq!(mask.0, grid(1, 3, &[0, 1, 0]));
        let target = to_training_target(&mask, &current, &t).unwrap();
        assert_eq!(target, grid(1, 3, &[0, 1, 0]));
    }

    #[test]
    fn unknown_masked_class_is_an_error() {
        let mask = SoundMask(grid(1, 1, &[1]));
        assert!(matches!(
            to_training_target(&mask, &grid(1, 1, &[10]), &street_table()),
            Err(PseudoError::UnknownClass(10))
        ));
        let zero = SoundMask(grid(1, 1, &[0]));
        assert_eq!(
            to_training_target(&zero, &grid(1, 1, &[10]), &street_table()).unwrap(),
            grid(1, 1, &[0])
        );
    }

    #[test]
    fn class_table_and_mask_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = street_table();
        t.save(&dir.path().join("classes.json")).unwrap();
        assert_eq!(ClassTable::load(&dir.path().join("classes.json")).unwrap(), t);
        let text = fs::read_to_string(dir.path().join("classes.json")).unwrap();
        assert!(text.contains("\"13\": \"car\""));

        let mask = SoundMask(grid(2, 2, &[0, 1, 1, 0]));
        let path = dir.path().join("mask.pgm");
        mask.write_pgm(&path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), grid(2, 2, &[0, 255, 255, 0]));
        assert_eq!(SoundMask::read_pgm(&path).unwrap(), mask);
    }

    proptest! {
        #[test]
        fn mode_matches_histogram_oracle(
            frames in 1usize..8,
            rows in 1usize..6,
            cols in 1usize..6,
            seed in prop::collection::vec(0u8..5, 8 * 36),
        ) {
            let stack = LabelStack::new(
                (0..frames)
                    .map(|t| Grid::from_fn(rows, cols, |r, c| seed[t * 36 + r * 6 + c]))
                    .collect(),
            )
            .unwrap();
            let out = mode_background(&stack);
            for r in 0..rows {
                for c in 0..cols {
                    let history: Vec<u8> = stack.frames().iter().map(|f| f.at(r, c)).collect();
                    prop_assert_eq!(out.at(r, c), histogram_mode(&history));
                }
            }
        }

        #[test]
        fn static_scene_has_no_sound(v in prop::collection::vec(0u8..20, 12)) {
            let y = grid(3, 4, &v);
            let all: BTreeSet<u8> = (0..20).collect();
            prop_assert_eq!(sound_mask(&y, &y, &all).unwrap().count(), 0);
        }

        #[test]
        fn enlarging_targets_is_monotone(
            cur in prop::collection::vec(0u8..6, 12),
            bg in prop::collection::vec(0u8..6, 12),
            small in prop::collection::btree_set(0u8..6, 0..4),
            extra in prop::collection::btree_set(0u8..6, 0..4),
        ) {
            let (cur, bg) = (grid(3, 4, &cur), grid(3, 4, &bg));
            let big: BTreeSet<u8> = small.union(&extra).copied().collect();
            let a = sound_mask(&cur, &bg, &small).unwrap();
            let b = sound_mask(&cur, &bg, &big).unwrap();
            for (x, y) in a.0.as_slice().iter().zip(b.0.as_slice()) {
                prop_assert!(x <= y);
            }
        }
    }
}
