//! Tokenize and TF-IDF featurize a handful of event descriptions.
//!
//! cargo run --example tfidf_text

use crossalign::features::{featurize_corpus, parse_corpus, tokenize};

const CORPUS: &str = "\
n1\t0\tHeavy rain flooded the river valley overnight.
n2\t0\tRescue boats reached flooded homes near the river.
n3\t1\tThe marathon started at dawn; thousands of runners crossed the bridge.
n4\t1\tRunners and crowds filled the city for the marathon.
n5\t2\tVoters queued for hours as the election polls opened.
";

fn main() -> crossalign::Result<()> {
    println!("tokens: {:?}", tokenize("The River's flooding, again!! 2 boats"));

    let docs = parse_corpus(CORPUS, "inline")?;
    let (vocab, records) = featurize_corpus(&docs, Some(12))?;
    println!("{} documents, {} terms kept", vocab.num_docs(), vocab.len());
    for (i, token) in vocab.tokens().iter().enumerate() {
        println!("  {token:10} df {}  idf {:.3}", vocab.df_table()[i], vocab.idf(i));
    }
    for r in &records {
        let nonzero: Vec<String> = r
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| format!("{}={v:.2}", vocab.tokens()[i]))
            .collect();
        println!("{} (label {}): {}", r.id, r.label, nonzero.join(" "));
    }
    Ok(())
}
