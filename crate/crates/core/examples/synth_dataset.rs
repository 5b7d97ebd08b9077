//! Generates a coupled synthetic forum and market and writes the input files
//! the command-line pipeline expects.
//!
//! cargo run --example synth_dataset -- [out_dir] [seed]

use std::path::PathBuf;

use sentiforecast::synth::{synth_generate, write_synth, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_out".into()));
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);

    let params = SynthParams {
        seed,
        ..SynthParams::default()
    };
    let data = synth_generate(&params)?;
    let files = write_synth(&out, &data)?;

    let first = data.market.close[0];
    let last = *data.market.close.last().unwrap();
    println!(
        "{} trading days, close {first:.2} -> {last:.2}, {} posts, {} labeled texts",
        data.market.len(),
        data.posts.len(),
        data.labeled.len()
    );
    println!("posts    {}", files.posts.display());
    println!("market   {}", files.market.display());
    println!("labeled  {}", files.labeled.display());
    println!("truth    {} (never read by the pipeline)", files.ground_truth.display());
    Ok(())
}
