//! Regenerate the bundled synthetic pressure-drop recording.
//!
//! ```text
//! cargo run --example make_synthetic -- data/synthetic_pressure_drop.csv
//! ```
//! Writes the CSV and a `<stem>.meta.toml` sidecar next to it.

use std::path::PathBuf;

use bnmr::sim::{synthetic_pressure_drop, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "synthetic_pressure_drop.csv".into()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let run = synthetic_pressure_drop(&SyntheticSpec::default(), &mut rng)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["time", "pressure_drop", "true_concentration"])?;
    for ((t, v), c) in run
        .series
        .time
        .iter()
        .zip(&run.series.value)
        .zip(&run.concentration)
    {
        w.write_record([t.to_string(), format!("{v:.4}"), format!("{c:.3}")])?;
    }
    w.flush()?;
    let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
    std::fs::write(
        path.with_file_name(format!("{stem}.meta.toml")),
        run.metadata.to_toml(),
    )?;
    println!("wrote {} rows to {}", run.series.len(), path.display());
    Ok(())
}
