//! Generate the bundled synthetic NetFlow capture and a matching
//! pipeline config, ready for the `flowdfa` binary.
//!
//! ```bash
//! cargo run --example generate_dataset -- [output-dir]
//! ```

use flowdfa::config::PipelineConfig;
use flowdfa::flow::write_flows;
use flowdfa::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".to_string());
    std::fs::create_dir_all(&dir)?;

    let synth = SynthConfig::default();
    let ds = generate(&synth);
    let csv = format!("{dir}/flows.csv");
    write_flows(&ds, &csv)?;

    let malicious = ds.records.iter().filter(|r| r.label.is_malicious()).count();
    println!("wrote {csv}: {} flows ({malicious} malicious)", ds.len());
    println!(
        "capture spans {} minutes; attacks start after the midpoint",
        synth.duration_minutes
    );

    let mut config = PipelineConfig::default();
    config.dataset.path = csv.clone().into();
    config.dataset.split_boundary_ms = synth.boundary_ms();
    config.encoder.scheme = flowdfa::encode::EncoderScheme::ContextualFrequency;
    config.output_dir = format!("{dir}/out").into();
    let config_path = format!("{dir}/flowdfa.toml");
    config.save(&config_path)?;
    println!("wrote {config_path} (split boundary {})", synth.boundary_ms());
    println!();
    println!("next steps:");
    println!("  flowdfa -c {config_path} train");
    println!("  flowdfa -c {config_path} score");
    println!("  flowdfa -c {config_path} eval --baseline");
    Ok(())
}
