//! Physical constants and the ml <-> N conversion shared by every module.

/// Gravitational acceleration [m/s²]. 200 ml of water weighs exactly 1.96 N.
pub const GRAVITY: f64 = 9.8;

/// Water density [g/ml].
pub const WATER_DENSITY: f64 = 1.0;

/// Weight of one millilitre of water [N].
pub const NEWTONS_PER_ML: f64 = WATER_DENSITY * 1e-3 * GRAVITY;

pub fn ml_to_newtons(ml: f64) -> f64 {
    ml * NEWTONS_PER_ML
}

pub fn newtons_to_ml(newtons: f64) -> f64 {
    newtons / NEWTONS_PER_ML
}

/// Weight of `kg` kilograms [N].
pub fn kg_to_newtons(kg: f64) -> f64 {
    kg * GRAVITY
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_matches_source_range_endpoints() {
        assert!((ml_to_newtons(200.0) - 1.96).abs() < 1e-12);
        assert!((ml_to_newtons(350.0) - 3.43).abs() < 1e-12);
        assert!((ml_to_newtons(45.0) - 0.441).abs() < 1e-12);
        assert!((newtons_to_ml(1.47) - 150.0).abs() < 1e-9);
    }
}
