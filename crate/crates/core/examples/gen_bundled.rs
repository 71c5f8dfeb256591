//! Regenerates the bundled data set.
//!
//!     cargo run --release -p flexagg --example gen_bundled -- data

use std::fs;
use std::path::PathBuf;

use flexagg::synth;
use flexagg::uncertainty::{DayType, EmOptions};

const PEAK_KW: f64 = 900.0;
const SEED: u64 = 1;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    fs::create_dir_all(&dir)?;

    let net = synth::feeder_25();
    let fleet = synth::fleet_25();
    fs::write(dir.join("feeder_25.json"), json(&net))?;
    fs::write(dir.join("fleet_25.json"), json(&fleet))?;
    fs::write(dir.join("fleet_25_pv_bess.json"), json(&synth::fleet_25_pv_bess()))?;
    for day in DayType::ALL {
        let p = synth::profiles(&net, &fleet, day, PEAK_KW, SEED);
        fs::write(dir.join(format!("profiles_{day}.csv")), p.write_csv())?;
    }

    let big = synth::feeder_123_scale();
    let big_fleet = synth::fleet_123_scale();
    fs::write(dir.join("feeder_123_scale.json"), json(&big))?;
    fs::write(dir.join("fleet_123_scale.json"), json(&big_fleet))?;
    let p = synth::profiles(&big, &big_fleet, DayType::Cloudy, 4.0 * PEAK_KW, SEED);
    fs::write(dir.join("profiles_123_scale_cloudy.csv"), p.write_csv())?;

    let history = synth::error_history(2000, SEED);
    fs::write(dir.join("error_history.csv"), history.write_csv())?;
    let fit = history.fit_table(5, &EmOptions::default())?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(dir.join("error_table.json"), json(&fit.table))?;
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
