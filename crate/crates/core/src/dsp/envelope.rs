use super::Waveform;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Magnitude of the analytic signal, built by zeroing negative frequencies
/// of a full-length FFT.
pub fn envelope(w: &Waveform) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = w.samples().iter().map(|&s| Complex64::new(s, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // Analytic-signal multiplier: 1 at DC (and Nyquist for even n), 2 for
    // positive frequencies, 0 for negative ones.
    let positive_end = n.div_ceil(2);
    for (k, z) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < positive_end {
            2.0
        } else {
            0.0
        };
        *z *= h;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|z| z.norm() * scale).collect()
}
