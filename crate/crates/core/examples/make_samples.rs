//! Regenerate the bundled sample traces: `cargo run -p canqa-core --example make_samples -- data/sample`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use canqa_core::frame::write_csv;
use canqa_core::sim::{simulate, SimConfig};
use canqa_core::AttackLabel;

const FRAMES: usize = 5_000;
const SEED: u64 = 2016;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/sample".to_string()));
    std::fs::create_dir_all(&dir)?;
    for (label, name) in [
        (AttackLabel::Normal, "normal_run_data.csv"),
        (AttackLabel::Dos, "DoS_dataset.csv"),
        (AttackLabel::Fuzzy, "Fuzzy_dataset.csv"),
        (AttackLabel::Gear, "gear_dataset.csv"),
        (AttackLabel::Rpm, "RPM_dataset.csv"),
    ] {
        let stream = simulate(&SimConfig::new(label, FRAMES, SEED));
        let path = dir.join(name);
        write_csv(&stream, BufWriter::new(File::create(&path)?))?;
        println!("{}: {} frames, {} injected", path.display(), stream.len(), stream.attack_frame_count());
    }
    Ok(())
}
