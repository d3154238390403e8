//! Print the default experiment config, or validate a config file and print
//! it with every default filled in.
//!
//! ```text
//! cargo run --example experiment_config > default.json
//! cargo run --example experiment_config -- my.json
//! ```

use pourbench::config::ExperimentConfig;

fn main() -> pourbench::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(p) => ExperimentConfig::load(std::path::Path::new(&p))?,
        None => ExperimentConfig::default(),
    };
    config.validate()?;
    print!("{}", config.to_json_string()?);
    Ok(())
}
