//! Parses a run configuration, applies command-line style overrides and
//! prints the effective TOML.

use graphcloth::config::{Overrides, RunConfig};

const FILE: &str = r#"
threads = 2

[materials]
bend_stiffness = 5.0
collision_margin = 0.1

[solver]
terms = "stretch,bend,gravity,contact"
levels = 2

[network]
latent = 64
iterations = 6

[training]
epochs = 50
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::parse(FILE)?;
    let overrides = Overrides { seed: Some(7), k: Some(8), ..Default::default() };
    config.apply(&overrides, false)?;
    print!("{}", config.to_toml());

    let typo = RunConfig::parse("[materials]\nstifness = 1.0\n").unwrap_err();
    println!("# rejected: {typo}");
    Ok(())
}
