//! Writes one draw of a simulation design as CSV on stdout.
//!
//! Usage: `cargo run --example make_csv -- DESIGN N SEED`
//!
//! Columns are `y`, `d1..dP` and `z1..zJ`.

use std::io;

use ivselect::io::{write_csv, ColumnSpec};
use ivselect::simulation::{replication_rng, SimulationDesign};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 3 {
        eprintln!("usage: make_csv DESIGN N SEED");
        std::process::exit(1);
    }
    let design = SimulationDesign::new(args[0].parse()?, args[1].parse()?)?;
    let data = design.generate(&mut replication_rng(args[2].parse()?, 0));
    let spec = ColumnSpec {
        outcome: "y".into(),
        endogenous: (1..=data.p()).map(|i| format!("d{i}")).collect(),
        instruments: (1..=data.j()).map(|i| format!("z{i}")).collect(),
        controls: Vec::new(),
        intercept: true,
    };
    write_csv(io::stdout().lock(), &data, &spec)?;
    Ok(())
}
