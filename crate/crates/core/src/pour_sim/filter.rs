use std::f64::consts::{PI, SQRT_2};

/// Second-order Butterworth low-pass, bilinear transform with pre-warping,
/// direct form II transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterworthLowPass {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
    sample_hz: f64,
}

impl ButterworthLowPass {
    pub fn new(cutoff_hz: f64, sample_hz: f64) -> Self {
        assert!(
            cutoff_hz > 0.0 && cutoff_hz < sample_hz / 2.0,
            "cutoff must lie in (0, Nyquist)"
        );
        let k = (PI * cutoff_hz / sample_hz).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
        let b0 = k2 * norm;
        ButterworthLowPass {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - SQRT_2 * k + k2) * norm],
            z: [0.0; 2],
            sample_hz,
        }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = b0 * x + self.z[0];
        self.z[0] = b1 * x - a1 * y + self.z[1];
        self.z[1] = b2 * x - a2 * y;
        y
    }

    /// Puts the filter at rest with constant input `x`.
    pub fn settle_at(&mut self, x: f64) {
        let [_, b1, b2] = self.b;
        let [a1, a2] = self.a;
        self.z[1] = (b2 - a2) * x;
        self.z[0] = (b1 - a1) * x + self.z[1];
    }

    pub fn sample_hz(&self) -> f64 {
        self.sample_hz
    }

    /// Group delay at DC [s]; a ramp input emerges delayed by this much.
    pub fn dc_group_delay(&self) -> f64 {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let num = (b1 + 2.0 * b2) / (b0 + b1 + b2);
        let den = (a1 + 2.0 * a2) / (1.0 + a1 + a2);
        (num - den) / self.sample_hz
    }

    /// |H(e^{jω})| at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let nr = b0 + b1 * c1 + b2 * c2;
        let ni = b1 * s1 + b2 * s2;
        let dr = 1.0 + a1 * c1 + a2 * c2;
        let di = a1 * s1 + a2 * s2;
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_gain_is_unity() {
        let mut f = ButterworthLowPass::new(1.3, 200.0);
        let mut y = 0.0;
        for _ in 0..4000 {
            y = f.update(2.5);
        }
        assert!((y - 2.5).abs() < 1e-6 * 2.5, "{y}");
        assert!((f.magnitude_at(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn settle_at_is_a_fixed_point() {
        let mut f = ButterworthLowPass::new(1.3, 200.0);
        f.settle_at(0.7);
        for _ in 0..10 {
            assert!((f.update(0.7) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn minus_three_db_at_cutoff() {
        // Simulated sinusoid, amplitude read off the steady-state tail.
        let fs = 200.0;
        let mut f = ButterworthLowPass::new(1.3, fs);
        let n = 20_000;
        let mut peak: f64 = 0.0;
        for i in 0..n {
            let t = i as f64 / fs;
            let y = f.update((2.0 * PI * 1.3 * t).sin());
            if i > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        let expected = 1.0 / SQRT_2;
        assert!((peak - expected).abs() < 0.02 * expected, "{peak}");
    }

    #[test]
    fn step_overshoot_is_butterworth_like() {
        let mut f = ButterworthLowPass::new(1.3, 200.0);
        let mut max: f64 = 0.0;
        let mut rising = true;
        let mut prev = 0.0;
        for _ in 0..2000 {
            let y = f.update(1.0);
            if rising && y < prev {
                rising = false;
            }
            if rising {
                assert!(y >= prev);
            }
            max = max.max(y);
            prev = y;
        }
        let overshoot = max - 1.0;
        assert!(overshoot > 0.03 && overshoot < 0.05, "{overshoot}");
    }

    #[test]
    fn group_delay_matches_analog_prototype() {
        let f = ButterworthLowPass::new(1.3, 200.0);
        let analog = SQRT_2 / (2.0 * PI * 1.3);
        assert!((f.dc_group_delay() - analog).abs() < 2e-3, "{}", f.dc_group_delay());
    }
}
