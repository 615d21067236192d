//! Remove one event from training and validation, then compare retrieval of
//! that unseen event against the events seen during training.
//!
//! cargo run --release --example new_event_holdout [held_label]

use crossalign::datagen::{generate, SynthSpec};
use crossalign::dataset::SplitFractions;
use crossalign::pipeline::{run_holdout, EvalOptions};
use crossalign::trainer::TrainConfig;

fn main() -> crossalign::Result<()> {
    let spec = SynthSpec::default();
    let held = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(spec.classes - 1);
    let dataset = generate(&spec)?;
    let outcome = run_holdout(
        &dataset,
        SplitFractions::default(),
        &[held],
        &TrainConfig::default(),
        &EvalOptions::default(),
    )?;
    println!("held-out label {held}");
    for (name, reports) in [("held", &outcome.held), ("seen", &outcome.seen)] {
        for r in reports {
            println!(
                "  {name:4} {:14} MAP {:.4} ({} queries)",
                r.direction.map_or("-", |d| d.name()),
                r.map,
                r.num_queries
            );
        }
    }
    println!("mean: held {:.4}, seen {:.4}", outcome.held_map(), outcome.seen_map());
    Ok(())
}
