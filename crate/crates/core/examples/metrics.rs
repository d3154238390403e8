//! Avg / RMSE / Std of a closed-loop error row, as reported in the
//! accuracy tables. Pass errors in ml, or run without arguments for a
//! reference row.
//!
//! ```text
//! cargo run --example metrics -- -12 -8 -15 -11
//! ```

use pourbench::evalkit::summarize;

fn main() {
    let mut errors: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    if errors.is_empty() {
        errors = vec![-18.0, -14.0, -6.0, -21.0, -19.0, -20.0, -20.0, -10.0, -6.0, -22.0, -24.0, -16.0];
    }
    let m = summarize(&errors);
    println!("n {}  avg {:.2}  rmse {:.2}  std {:.2}", m.n, m.avg, m.rmse, m.std);
}
