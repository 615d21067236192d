//! Generate unpaired synthetic image/text data, train both branches with
//! CORAL alignment and print the per-epoch loss curve.
//!
//! cargo run --release --example synthetic_training [epochs]

use crossalign::datagen::{generate, SynthSpec};
use crossalign::dataset::SplitFractions;
use crossalign::pipeline::{partition_for, train_on};
use crossalign::trainer::TrainConfig;

fn main() -> crossalign::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let dataset = generate(&SynthSpec::default())?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let partition = partition_for(&dataset, SplitFractions::default(), config.seed)?;
    println!(
        "train: {} images, {} texts; {} labels",
        partition.image.train.len(),
        partition.text.train.len(),
        dataset.classes()
    );

    let (_, log) = train_on(&dataset, &partition, &config)?;
    println!("epoch  total     img       txt       coral_fc1  coral_fc2");
    for e in &log.epochs {
        let l = &e.loss;
        println!(
            "{:5}  {:.5}  {:.5}  {:.5}  {:.3e}  {:.3e}",
            e.epoch, l.total, l.image, l.text, l.coral_fc1, l.coral_fc2
        );
    }
    Ok(())
}
