//! Class archetype signals standing in for recorded traffic.

use super::{SourceClass, SourceSpec};
use crate::dsp::{rms, Waveform};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Deterministic emitted signal for one source; its RMS equals `spec.gain`.
pub fn synth_source_signal(spec: &SourceSpec, duration: f64, sample_rate: u32) -> Waveform {
    let n = (duration * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ spec.class.id() as u64);
    let mut x = match spec.class {
        SourceClass::Car => car(&mut rng, n, sr),
        SourceClass::Motorcycle => motorcycle(&mut rng, n, sr),
        SourceClass::Train => train(&mut rng, n, sr),
    };
    x = unit_rms(x);
    x.iter_mut().for_each(|v| *v *= spec.gain);
    Waveform::new(x, sample_rate).expect("archetypes are finite")
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let level = rms(&x);
    if level > 0.0 {
        x.iter_mut().for_each(|v| *v /= level);
    }
    x
}

/// Harmonic stack on a slowly wandering fundamental.
fn harmonic_stack(rng: &mut ChaCha8Rng, n: usize, sr: f64, f0: f64, amplitudes: &[f64], drift: f64) -> Vec<f64> {
    let drift_rate = rng.random_range(0.2..0.8);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let phases: Vec<f64> = amplitudes.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut base_phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let time = t as f64 / sr;
        let f = f0 * (1.0 + drift * (2.0 * PI * drift_rate * time + drift_phase).sin());
        let mut v = 0.0;
        for (k, (&a, &p)) in amplitudes.iter().zip(&phases).enumerate() {
            if f * (k + 1) as f64 >= sr / 2.0 {
                break;
            }
            v += a * ((k + 1) as f64 * base_phase + p).sin();
        }
        out.push(v);
        base_phase += 2.0 * PI * f / sr;
        if base_phase > 2.0 * PI * 1e6 {
            base_phase = base_phase.rem_euclid(2.0 * PI);
        }
    }
    out
}

/// Pink noise from white Gaussian noise (Kellet's economy filter).
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// White noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(rng: &mut ChaCha8Rng, n: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let hi = hi.min(0.45 * sr);
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * sr / n as f64;
        if f < lo || f > hi {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.re / n as f64).collect()
}

fn car(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.random_range(80.0..120.0);
    let amps: Vec<f64> = (1..=10).map(|k| 1.0 / k as f64).collect();
    let engine = unit_rms(harmonic_stack(rng, n, sr, f0, &amps, 0.03));
    let road = unit_rms(pink_noise(rng, n));
    engine.iter().zip(&road).map(|(e, r)| 0.7 * e + 0.7 * r).collect()
}

fn motorcycle(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.random_range(140.0..220.0);
    let pulse_rate = rng.random_range(10.0..14.0);
    let pulse_phase = rng.random_range(0.0..2.0 * PI);
    let amps: Vec<f64> = (1..=14).map(|k| 1.0 / (k as f64).powf(0.7)).collect();
    let engine = unit_rms(harmonic_stack(rng, n, sr, f0, &amps, 0.05));
    let hiss = unit_rms(pink_noise(rng, n));
    (0..n)
        .map(|t| {
            let s = 0.5 + 0.5 * (2.0 * PI * pulse_rate * t as f64 / sr + pulse_phase).sin();
            let env = 0.15 + 0.85 * s * s * s;
            env * engine[t] + 0.15 * hiss[t]
        })
        .collect()
}

fn train(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.random_range(40.0..60.0);
    let hum = unit_rms(harmonic_stack(rng, n, sr, f0, &[1.0, 0.5, 0.3, 0.2], 0.01));
    let screech = unit_rms(band_noise(rng, n, sr, 2000.0, 4000.0));
    let wobble_rate = rng.random_range(0.5..1.5);
    let wobble_phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|t| {
            let w = 0.75 + 0.25 * (2.0 * PI * wobble_rate * t as f64 / sr + wobble_phase).sin();
            0.6 * hum[t] + 0.8 * w * screech[t]
        })
        .collect()
}
