//! Rig geometry shared by the simulator, the S³R pipeline and the harness.
//!
//! The rig carries four binaural pairs facing 0°, 90°, 180° and 270°.
//! Microphone ids follow the layout of the physical eight-microphone rig:
//! pair (3, 8) faces front, (1, 6) faces 90°, (4, 7) faces 180° and (2, 5)
//! faces 270°. The first id of each pair is the left ear.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Facing direction of one binaural pair, counter-clockwise from the front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::Deg0, Orientation::Deg90, Orientation::Deg180, Orientation::Deg270];

    /// The orientations S³R predicts from the front pair.
    pub const TARGETS: [Orientation; 3] = [Orientation::Deg90, Orientation::Deg180, Orientation::Deg270];

    pub fn degrees(self) -> u32 {
        match self {
            Orientation::Deg0 => 0,
            Orientation::Deg90 => 90,
            Orientation::Deg180 => 180,
            Orientation::Deg270 => 270,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Self> {
        match deg {
            0 => Some(Orientation::Deg0),
            90 => Some(Orientation::Deg90),
            180 => Some(Orientation::Deg180),
            270 => Some(Orientation::Deg270),
            _ => None,
        }
    }

    /// Position of this pair in rig order (0°, 90°, 180°, 270°).
    pub fn index(self) -> usize {
        (self.degrees() / 90) as usize
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ear {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    /// Distance between the two ears of a pair, meters.
    pub ear_separation: f64,
    /// Meters per second.
    pub speed_of_sound: f64,
    /// (left id, right id) per pair, indexed by `Orientation::index`.
    pub mic_ids: [(u8, u8); 4],
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            ear_separation: 0.18,
            speed_of_sound: 343.0,
            mic_ids: [(3, 8), (1, 6), (4, 7), (2, 5)],
        }
    }
}

impl RigConfig {
    pub fn pair_orientations(&self) -> [Orientation; 4] {
        Orientation::ALL
    }

    pub fn mic_pair(&self, orientation: Orientation) -> (u8, u8) {
        self.mic_ids[orientation.index()]
    }

    /// Looks up which pair and ear a microphone id belongs to.
    pub fn locate_mic(&self, id: u8) -> Option<(Orientation, Ear)> {
        Orientation::ALL.into_iter().find_map(|o| {
            let (l, r) = self.mic_pair(o);
            if l == id {
                Some((o, Ear::Left))
            } else if r == id {
                Some((o, Ear::Right))
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mic_ids_cover_one_to_eight_once() {
        let rig = RigConfig::default();
        let mut ids: Vec<u8> = rig.mic_ids.iter().flat_map(|&(l, r)| [l, r]).collect();
        ids.sort_unstable();
        assert_eq!(ids, (1..=8).collect::<Vec<u8>>());
        assert_eq!(rig.locate_mic(3), Some((Orientation::Deg0, Ear::Left)));
        assert_eq!(rig.locate_mic(5), Some((Orientation::Deg270, Ear::Right)));
        assert_eq!(rig.locate_mic(9), None);
    }

    #[test]
    fn orientation_round_trips_degrees() {
        for o in Orientation::ALL {
            assert_eq!(Orientation::from_degrees(o.degrees()), Some(o));
        }
        assert_eq!(Orientation::from_degrees(45), None);
    }
}
