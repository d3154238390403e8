/// Accelerate / cruise / decelerate profile between two values.
///
/// Used in weight space as the PID reference and in angle space for the
/// return to upright. Position is C¹: the slope ramps linearly at ±`accel`
/// and never exceeds `rate` in magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    start: f64,
    target: f64,
    /// +1 rising, -1 falling.
    dir: f64,
    accel: f64,
    peak_rate: f64,
    t_acc: f64,
    t_cruise: f64,
}

impl Trapezoid {
    /// Profile from `from` to `to` in either direction.
    pub fn between(from: f64, to: f64, rate: f64, accel: f64) -> Self {
        assert!(rate > 0.0 && accel > 0.0, "rate and accel must be positive");
        let dist = (to - from).abs();
        let dir = if to >= from { 1.0 } else { -1.0 };
        let (peak_rate, t_acc, t_cruise) = if dist == 0.0 {
            (0.0, 0.0, 0.0)
        } else if dist < rate * rate / accel {
            // Triangle: accelerate to mid-way, then decelerate.
            let peak = (dist * accel).sqrt();
            (peak, peak / accel, 0.0)
        } else {
            let t_acc = rate / accel;
            (rate, t_acc, (dist - rate * t_acc) / rate)
        };
        Trapezoid {
            start: from,
            target: to,
            dir,
            accel,
            peak_rate,
            t_acc,
            t_cruise,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.t_acc + self.t_cruise
    }

    pub fn is_triangular(&self) -> bool {
        self.t_cruise == 0.0 && self.peak_rate > 0.0
    }

    pub fn peak_rate(&self) -> f64 {
        self.peak_rate
    }

    pub fn value(&self, t: f64) -> f64 {
        let d = self.distance(t.max(0.0));
        if t >= self.duration() {
            self.target
        } else {
            self.start + self.dir * d
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        let (ta, tc) = (self.t_acc, self.t_cruise);
        let s = if t <= 0.0 || t >= self.duration() {
            0.0
        } else if t < ta {
            self.accel * t
        } else if t < ta + tc {
            self.peak_rate
        } else {
            self.peak_rate - self.accel * (t - ta - tc)
        };
        self.dir * s
    }

    fn distance(&self, t: f64) -> f64 {
        let (a, ta, tc, v) = (self.accel, self.t_acc, self.t_cruise, self.peak_rate);
        if t < ta {
            0.5 * a * t * t
        } else if t < ta + tc {
            0.5 * a * ta * ta + v * (t - ta)
        } else {
            let td = (t - ta - tc).min(ta);
            0.5 * a * ta * ta + v * tc + v * td - 0.5 * a * td * td
        }
    }
}

/// Weight reference from `start_value` up to `target` at `rate` N/s with
/// `accel` N/s². A target at or below the start gives a constant reference at
/// the target.
pub fn build_trapezoid(start_value: f64, rate: f64, accel: f64, target: f64) -> Trapezoid {
    if target <= start_value {
        Trapezoid::between(target, target, rate, accel)
    } else {
        Trapezoid::between(start_value, target, rate, accel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_example() {
        let tr = build_trapezoid(0.0, 0.5, 5.0, 2.0);
        assert!((tr.t_acc - 0.1).abs() < 1e-12);
        assert!((tr.duration() - 4.1).abs() < 1e-12);
        assert!((tr.value(2.05) - 1.0).abs() < 1e-12);
        assert_eq!(tr.value(0.0), 0.0);
        assert_eq!(tr.value(10.0), 2.0);
        assert!(!tr.is_triangular());
    }

    #[test]
    fn short_moves_are_triangular() {
        // rate² / accel = 0.05
        let tr = build_trapezoid(1.0, 0.5, 5.0, 1.04);
        assert!(tr.is_triangular());
        assert!(tr.peak_rate() < 0.5);
        assert!((tr.value(tr.duration()) - 1.04).abs() < 1e-12);
        assert!((tr.value(tr.duration() / 2.0) - 1.02).abs() < 1e-12);
    }

    #[test]
    fn degenerate_target_is_constant() {
        let tr = build_trapezoid(2.0, 0.5, 5.0, 1.5);
        assert_eq!(tr.duration(), 0.0);
        assert_eq!(tr.value(0.0), 1.5);
        assert_eq!(tr.value(3.0), 1.5);
    }

    #[test]
    fn falling_profile_mirrors_rising() {
        let up = Trapezoid::between(0.0, 1.2, 2.0, 40.0);
        let down = Trapezoid::between(1.2, 0.0, 2.0, 40.0);
        for k in 0..=100 {
            let t = up.duration() * k as f64 / 100.0;
            assert!((up.value(t) + down.value(t) - 1.2).abs() < 1e-12);
            assert!((up.slope(t) + down.slope(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_is_bounded_and_continuous() {
        let tr = build_trapezoid(0.3, 0.784, 2.0, 2.5);
        let n = 20_000;
        let dt = tr.duration() / n as f64;
        let mut prev = tr.slope(0.0);
        for k in 1..=n {
            let s = tr.slope(k as f64 * dt);
            assert!(s <= 0.784 + 1e-12);
            assert!((s - prev).abs() <= 2.0 * dt + 1e-9);
            prev = s;
        }
        // Position derivative agrees with the slope.
        let t = 0.27;
        let h = 1e-6;
        let fd = (tr.value(t + h) - tr.value(t - h)) / (2.0 * h);
        assert!((fd - tr.slope(t)).abs() < 1e-6);
    }
}
