use super::{synth_source_signal, Scene, SceneError};
use crate::dsp::Waveform;
use crate::rig::{Ear, Orientation, RigConfig};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Head-shadow depth of the level-difference model.
pub const ILD_DEPTH: f64 = 0.35;
/// Corner frequency of the rear-hemisphere low-pass shading, Hz.
pub const REAR_SHADING_HZ: f64 = 1000.0;

/// Direct and low-passed copies of one emitted signal.
struct PreparedSource {
    azimuth: f64,
    distance: f64,
    direct: Vec<f64>,
    muffled: Vec<f64>,
}

fn one_pole_lowpass(x: &[f64], corner_hz: f64, sr: f64) -> Vec<f64> {
    let a = 1.0 - (-2.0 * std::f64::consts::PI * corner_hz / sr).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y += a * (v - y);
            y
        })
        .collect()
}

fn prepare(scene: &Scene, sr: u32) -> Vec<PreparedSource> {
    scene
        .sources
        .iter()
        .map(|s| {
            let direct = synth_source_signal(s, scene.duration, sr).into_samples();
            let muffled = one_pole_lowpass(&direct, REAR_SHADING_HZ, sr as f64);
            PreparedSource {
                azimuth: s.azimuth,
                distance: s.distance,
                direct,
                muffled,
            }
        })
        .collect()
}

/// Adds `gain · x(t - delay)` into `out`, linearly interpolating the
/// fractional part of the delay.
fn add_delayed(out: &mut [f64], x: &[f64], delay: f64, gain: f64) {
    let whole = delay.floor();
    let frac = delay - whole;
    let whole = whole as usize;
    for (t, o) in out.iter_mut().enumerate().skip(whole) {
        let i = t - whole;
        let cur = x[i];
        let prev = if i > 0 { x[i - 1] } else { 0.0 };
        *o += gain * ((1.0 - frac) * cur + frac * prev);
    }
}

fn ambient_bed(scene: &Scene, ear: Ear, n: usize) -> Vec<f64> {
    let salt = match ear {
        Ear::Left => 0x4C45_4654,
        Ear::Right => 0x5249_4754,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ salt);
    (0..n).map(|_| scene.ambient_level * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn render_prepared(scene: &Scene, sources: &[PreparedSource], orientation: Orientation, rig: &RigConfig, sr: u32) -> (Waveform, Waveform) {
    let n = scene.sample_count(sr);
    let srf = sr as f64;
    // Half the interaural travel time in samples; a common latency of
    // `latency` samples keeps both ear delays nonnegative and gives the two
    // ears mirrored fractional parts.
    let half_itd = rig.ear_separation / 2.0 / rig.speed_of_sound * srf;
    let latency = half_itd.ceil();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for src in sources {
        let rel = (src.azimuth - orientation.degrees() as f64).rem_euclid(360.0);
        let theta = rel.to_radians();
        let (sin, cos) = theta.sin_cos();
        let front = 0.5 * (1.0 + cos);
        let shaded: Vec<f64> = src
            .direct
            .iter()
            .zip(&src.muffled)
            .map(|(d, m)| front * d + (1.0 - front) * m)
            .collect();
        let shift = half_itd * sin;
        let attenuation = 1.0 / src.distance;
        add_delayed(&mut left, &shaded, latency - shift, (1.0 + ILD_DEPTH * sin) * attenuation);
        add_delayed(&mut right, &shaded, latency + shift, (1.0 - ILD_DEPTH * sin) * attenuation);
    }
    if scene.ambient_level > 0.0 {
        for (o, a) in left.iter_mut().zip(ambient_bed(scene, Ear::Left, n)) {
            *o += a;
        }
        for (o, a) in right.iter_mut().zip(ambient_bed(scene, Ear::Right, n)) {
            *o += a;
        }
    }
    (Waveform::new(left, sr).expect("finite"), Waveform::new(right, sr).expect("finite"))
}

/// Renders the (left, right) pair facing `orientation`.
pub fn render_pair(scene: &Scene, orientation: Orientation, rig: &RigConfig, sr: u32) -> Result<(Waveform, Waveform), SceneError> {
    scene.validate()?;
    Ok(render_prepared(scene, &prepare(scene, sr), orientation, rig, sr))
}

/// Degree-valued entry point; rejects anything but 0, 90, 180 and 270.
pub fn render_binaural(scene: &Scene, orientation_deg: f64, rig: &RigConfig, sr: u32) -> Result<(Waveform, Waveform), SceneError> {
    let orientation = (orientation_deg.fract() == 0.0 && orientation_deg >= 0.0)
        .then(|| Orientation::from_degrees(orientation_deg as u32))
        .flatten()
        .ok_or(SceneError::BadOrientation(orientation_deg))?;
    render_pair(scene, orientation, rig, sr)
}

/// Eight sample-aligned channels: four pairs in rig order.
#[derive(Debug, Clone, PartialEq)]
pub struct RigClip {
    pub pairs: [(Waveform, Waveform); 4],
    pub mic_ids: [(u8, u8); 4],
}

impl RigClip {
    pub fn pair(&self, orientation: Orientation) -> &(Waveform, Waveform) {
        &self.pairs[orientation.index()]
    }

    pub fn channel(&self, orientation: Orientation, ear: Ear) -> &Waveform {
        let (l, r) = self.pair(orientation);
        match ear {
            Ear::Left => l,
            Ear::Right => r,
        }
    }

    /// Channels ordered by microphone id 1..=8.
    pub fn by_mic_id(&self) -> Vec<&Waveform> {
        let mut out: Vec<(u8, &Waveform)> = Vec::with_capacity(8);
        for (i, (l, r)) in self.pairs.iter().enumerate() {
            out.push((self.mic_ids[i].0, l));
            out.push((self.mic_ids[i].1, r));
        }
        out.sort_by_key(|(id, _)| *id);
        out.into_iter().map(|(_, w)| w).collect()
    }
}

pub fn render_rig(scene: &Scene, rig: &RigConfig, sr: u32) -> Result<RigClip, SceneError> {
    scene.validate()?;
    let sources = prepare(scene, sr);
    let pairs = Orientation::ALL.map(|o| render_prepared(scene, &sources, o, rig, sr));
    Ok(RigClip {
        pairs,
        mic_ids: rig.mic_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SourceClass, SourceSpec};

    fn one_source(class: SourceClass, azimuth: f64, distance: f64) -> Scene {
        Scene::new(
            vec![SourceSpec {
                class,
                azimuth,
                distance,
                seed: 17,
                gain: 1.0,
            }],
            0.0,
            0.5,
            3,
        )
        .unwrap()
    }

    /// Lag (right relative to left) maximizing the cross-correlation.
    fn xcorr_lag(left: &[f64], right: &[f64], max_lag: isize) -> isize {
        let n = left.len() as isize;
        (-max_lag..=max_lag)
            .max_by(|&a, &b| {
                let score = |lag: isize| -> f64 {
                    (0..n)
                        .filter(|&t| t + lag >= 0 && t + lag < n)
                        .map(|t| left[t as usize] * right[(t + lag) as usize])
                        .sum()
                };
                score(a).partial_cmp(&score(b)).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn dead_ahead_source_gives_identical_ears() {
        let scene = one_source(SourceClass::Car, 0.0, 3.0);
        let (l, r) = render_binaural(&scene, 0.0, &RigConfig::default(), 16_000).unwrap();
        assert_eq!(l, r);
    }

    #[test]
    fn lateral_source_lag_is_eight_samples_at_16k() {
        let scene = one_source(SourceClass::Car, 90.0, 3.0);
        let (l, r) = render_binaural(&scene, 0.0, &RigConfig::default(), 16_000).unwrap();
        let expected = (0.18f64 / 343.0 * 16_000.0).round() as isize;
        assert_eq!(expected, 8);
        assert_eq!(xcorr_lag(l.samples(), r.samples(), 20), expected);
    }

    #[test]
    fn empty_scene_without_ambient_is_silent() {
        let scene = Scene::new(vec![], 0.0, 0.25, 1).unwrap();
        let (l, r) = render_binaural(&scene, 90.0, &RigConfig::default(), 16_000).unwrap();
        assert!(l.samples().iter().chain(r.samples()).all(|&v| v == 0.0));
        assert_eq!(l.len(), 4000);
    }

    #[test]
    fn non_rig_orientation_is_rejected() {
        let scene = one_source(SourceClass::Car, 0.0, 3.0);
        for bad in [45.0, -90.0, 90.5, 360.0] {
            assert!(matches!(
                render_binaural(&scene, bad, &RigConfig::default(), 16_000),
                Err(SceneError::BadOrientation(_))
            ));
        }
    }

    #[test]
    fn front_source_has_zero_itd_on_front_pair_and_maximal_on_side_pair() {
        let scene = one_source(SourceClass::Car, 0.0, 3.0);
        let clip = render_rig(&scene, &RigConfig::default(), 16_000).unwrap();
        let (l0, r0) = clip.pair(Orientation::Deg0);
        let (l90, r90) = clip.pair(Orientation::Deg90);
        assert_eq!(xcorr_lag(l0.samples(), r0.samples(), 20), 0);
        // Relative to the 90° pair the source sits at -90°: right ear leads.
        assert_eq!(xcorr_lag(l90.samples(), r90.samples(), 20).abs(), 8);
    }

    #[test]
    fn rig_channels_by_mic_id() {
        let scene = one_source(SourceClass::Train, 45.0, 4.0);
        let clip = render_rig(&scene, &RigConfig::default(), 8000).unwrap();
        let chans = clip.by_mic_id();
        assert_eq!(chans.len(), 8);
        // Mic 3 is the left ear of the front pair, mic 5 the right of 270°.
        assert_eq!(chans[2], clip.channel(Orientation::Deg0, Ear::Left));
        assert_eq!(chans[4], clip.channel(Orientation::Deg270, Ear::Right));
        assert!(chans.iter().all(|w| w.len() == 4000));
    }

    #[test]
    fn doubling_distance_halves_rms() {
        for class in SourceClass::ALL {
            let near = render_pair(&one_source(class, 70.0, 3.0), Orientation::Deg0, &RigConfig::default(), 16_000).unwrap();
            let far = render_pair(&one_source(class, 70.0, 6.0), Orientation::Deg0, &RigConfig::default(), 16_000).unwrap();
            let ratio = near.0.rms() / far.0.rms();
            assert!(far.0.rms() < near.0.rms());
            assert!((ratio - 2.0).abs() < 1e-9, "{ratio}");
        }
    }

    #[test]
    fn ambient_bed_is_shared_by_all_pairs() {
        let scene = Scene::new(vec![], 0.01, 0.25, 8).unwrap();
        let clip = render_rig(&scene, &RigConfig::default(), 16_000).unwrap();
        let front = clip.pair(Orientation::Deg0);
        assert!(front.0.rms() > 0.0);
        assert_ne!(front.0, front.1);
        for o in Orientation::TARGETS {
            assert_eq!(clip.pair(o), front);
        }
    }
}
