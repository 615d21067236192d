//! Same data and seed, four objectives: no alignment, CORAL, MMD and
//! triplet. Prints MAP and the final fc2 CORAL distance for each. MMD runs
//! at a reduced alignment weight; see `MMD_ABLATION_WEIGHT`.
//!
//! cargo run --release --example alignment_ablation [seed]

use crossalign::datagen::{generate, SynthSpec};
use crossalign::dataset::SplitFractions;
use crossalign::pipeline::{ablation_configs, run, EvalOptions};
use crossalign::trainer::TrainConfig;

fn main() -> crossalign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(42);
    let dataset = generate(&SynthSpec {
        seed,
        ..SynthSpec::default()
    })?;
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    println!("alignment  weight  avg MAP  final fc2 coral");
    for config in ablation_configs(&base) {
        let out = run(&dataset, SplitFractions::default(), &config, &EvalOptions::default())?;
        let fc2 = out.log.last().map_or(f64::NAN, |l| l.coral_fc2);
        println!(
            "{:9}  {:6}  {:.4}   {fc2:.3e}",
            config.alignment.name(),
            config.alignment_weight,
            out.average_map()
        );
    }
    Ok(())
}
