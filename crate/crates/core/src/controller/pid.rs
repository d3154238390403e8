/// PID gains and the output clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub limit: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub saturated: bool,
}

/// One control update. `e = reference − measured`.
///
/// Anti-windup by conditional integration: the integrator step is undone
/// when the output saturates and the error would push it further into the
/// limit.
pub fn pid_step(gains: &PidGains, reference: f64, measured: f64, state: &mut PidState) -> f64 {
    let e = reference - measured;
    let de = match state.prev_error {
        Some(prev) => (e - prev) / gains.period,
        None => 0.0,
    };
    state.prev_error = Some(e);
    let before = state.integral;
    state.integral += e * gains.period;
    let raw = gains.kp * e + gains.ki * state.integral + gains.kd * de;
    let u = raw.clamp(-gains.limit, gains.limit);
    state.saturated = u != raw;
    if state.saturated && e * raw > 0.0 {
        state.integral = before;
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(kp: f64, ki: f64, kd: f64) -> PidGains {
        PidGains {
            kp,
            ki,
            kd,
            limit: 1.0,
            period: 0.01,
        }
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let g = gains(0.5, 0.3, 0.02);
        let mut s = PidState::default();
        for _ in 0..100 {
            assert_eq!(pid_step(&g, 1.3, 1.3, &mut s), 0.0);
        }
    }

    #[test]
    fn pure_proportional() {
        let g = gains(0.4, 0.0, 0.0);
        let mut s = PidState::default();
        assert!((pid_step(&g, 1.0, 0.5, &mut s) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_a_ramp() {
        let g = gains(0.0, 0.0, 0.04);
        let mut s = PidState::default();
        pid_step(&g, 0.0, 0.0, &mut s);
        // Error grows 0.01 per period: de/dt = 1.
        let u = pid_step(&g, 0.01, 0.0, &mut s);
        assert!((u - 0.04).abs() < 1e-12);
    }

    #[test]
    fn integrator_holds_while_saturated() {
        let g = gains(0.0, 5.0, 0.0);
        let mut s = PidState::default();
        // Large error: after one step the integral term already saturates.
        for _ in 0..50 {
            let u = pid_step(&g, 10.0, 0.0, &mut s);
            assert!(u <= 1.0);
        }
        assert!(s.saturated);
        let held = s.integral;
        for _ in 0..50 {
            pid_step(&g, 10.0, 0.0, &mut s);
        }
        assert_eq!(s.integral, held);
        // Once the error reverses the output leaves the limit straight away.
        let u = pid_step(&g, 0.0, 2.0, &mut s);
        assert!(u < 1.0);
        assert!(held * 5.0 < 2.0, "integrator wound up to {held}");
    }
}
