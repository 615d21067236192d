//! Train on synthetic data, then rank texts for an image query and report
//! MAP under each distance metric.
//!
//! cargo run --release --example retrieval_map

use crossalign::datagen::{generate, SynthSpec};
use crossalign::dataset::{Modality, SplitFractions};
use crossalign::pipeline::{evaluate, partition_for, test_indices, train_on, EvalOptions};
use crossalign::retrieval::{rank, EmbeddingKind, Metric};
use crossalign::trainer::TrainConfig;

fn main() -> crossalign::Result<()> {
    let dataset = generate(&SynthSpec::default())?;
    let config = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let partition = partition_for(&dataset, SplitFractions::default(), config.seed)?;
    let (params, _) = train_on(&dataset, &partition, &config)?;

    let (images, texts) = test_indices(&params, &dataset, &partition, EmbeddingKind::Probability)?;
    let ranking = rank(images.embedding(0), images.id(0), images.label(0), &texts, Metric::Cosine)?;
    println!("query {} (label {}), top 5 texts:", ranking.query_id, ranking.query_label);
    for item in ranking.items.iter().take(5) {
        let mark = if item.relevant { "*" } else { " " };
        println!("  {mark} {} label {} score {:.4}", item.id, item.label, item.score);
    }
    assert_eq!(images.modality, Modality::Image);

    let options = EvalOptions {
        metrics: Metric::ALL.to_vec(),
        ..EvalOptions::default()
    };
    for r in evaluate(&params, &dataset, &partition, &options)? {
        println!(
            "{:14} {:9} MAP {:.4} over {} queries",
            r.direction.map_or("-", |d| d.name()),
            r.metric.name(),
            r.map,
            r.num_queries
        );
    }
    Ok(())
}
