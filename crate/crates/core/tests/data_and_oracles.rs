mod common;

use crossalign::alignment::{coral_loss, mmd_loss, AlignmentKind};
use crossalign::datagen::{generate, SynthSpec};
use crossalign::dataset::{load_manifest, save_manifest, split, Modality, SplitFractions};
use crossalign::network::{cross_entropy, ModelParams};
use crossalign::numerics::seeded_rng;
use crossalign::retrieval::{average_precision, rank, EmbeddingIndex, EmbeddingKind, Metric};
use crossalign::trainer::total_loss;
use rand::Rng as _;

use common::{brute_force_ap, full_objective_gradient_error, random_matrix};

#[test]
fn manifest_round_trip_preserves_dataset() {
    let spec = SynthSpec {
        n_image: 30,
        n_text: 25,
        ..SynthSpec::default()
    };
    let dataset = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_manifest(&dataset, dir.path()).unwrap();
    let (loaded, warnings) = load_manifest(&manifest).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(loaded, dataset);
}

#[test]
fn synthetic_data_is_nearest_centroid_separable() {
    let dataset = generate(&SynthSpec::default()).unwrap();
    for modality in Modality::BOTH {
        let n = dataset.records(modality).len();
        let all: Vec<usize> = (0..n).collect();
        let x = dataset.features(modality, &all);
        let y = dataset.labels(modality, &all);
        let k = dataset.classes();
        let dim = x.cols();
        let mut centroids = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (row, &label) in x.row_iter().zip(&y) {
            counts[label] += 1;
            for (c, v) in centroids[label].iter_mut().zip(row) {
                *c += v;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let correct = x
            .row_iter()
            .zip(&y)
            .filter(|(row, &label)| {
                let nearest = (0..k)
                    .min_by(|&a, &b| {
                        let d = |c: usize| row.iter().zip(&centroids[c]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                        d(a).total_cmp(&d(b))
                    })
                    .unwrap();
                nearest == label
            })
            .count();
        assert!(correct as f64 / n as f64 >= 0.99, "{modality}: {correct}/{n}");
    }
}

#[test]
fn split_covers_every_sample_once() {
    let dataset = generate(&SynthSpec::default()).unwrap();
    let (partition, _) = split(&dataset, SplitFractions::default(), 9).unwrap();
    for modality in Modality::BOTH {
        let s = partition.get(modality);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..dataset.records(modality).len()).collect::<Vec<_>>());
    }
}

#[test]
fn total_loss_is_the_sum_of_its_terms() {
    for seed in 0..5 {
        let mut rng = seeded_rng(seed);
        let params = ModelParams::init(7, 5, 6, 4, &mut rng);
        let xi = random_matrix(&mut rng, 9, 7);
        let xt = random_matrix(&mut rng, 11, 5);
        let yi: Vec<usize> = (0..9).map(|_| rng.gen_range(0..4)).collect();
        let yt: Vec<usize> = (0..11).map(|_| rng.gen_range(0..4)).collect();
        let img = params.image.forward(&xi).unwrap();
        let txt = params.text.forward(&xt).unwrap();

        let ce_i = cross_entropy(&img.probs, &yi).unwrap();
        let ce_t = cross_entropy(&txt.probs, &yt).unwrap();
        let c1 = coral_loss(&img.hidden, &txt.hidden).unwrap();
        let c2 = coral_loss(&img.logits, &txt.logits).unwrap();
        let l = total_loss(&img, &txt, &yi, &yt, AlignmentKind::Coral, 0.7, None).unwrap();
        assert!((l.total - (ce_i + ce_t + 0.7 * (c1 + c2))).abs() < 1e-12);
        assert_eq!((l.image, l.text, l.coral_fc1, l.coral_fc2), (ce_i, ce_t, c1, c2));

        let none = total_loss(&img, &txt, &yi, &yt, AlignmentKind::None, 0.7, None).unwrap();
        assert!((none.total - (ce_i + ce_t)).abs() < 1e-12);
        assert_eq!(none.coral_fc2, c2);

        let m1 = mmd_loss(&img.hidden, &txt.hidden, 1.0, 2).unwrap();
        let m2 = mmd_loss(&img.logits, &txt.logits, 1.0, 2).unwrap();
        let mmd = total_loss(&img, &txt, &yi, &yt, AlignmentKind::mmd(), 2.0, None).unwrap();
        assert!((mmd.total - (ce_i + ce_t + 2.0 * (m1 + m2))).abs() < 1e-10);
    }
}

#[test]
fn full_objective_gradients_for_each_alignment() {
    for seed in 0..5 {
        for kind in [AlignmentKind::None, AlignmentKind::Coral, AlignmentKind::mmd()] {
            let err = full_objective_gradient_error(seed, kind, 1e-5, 1e-7);
            assert!(err < 1e-3, "{kind} seed {seed}: {err:.2e}");
        }
    }
}

#[test]
fn map_on_model_output_matches_brute_force() {
    let mut rng = seeded_rng(11);
    let params = ModelParams::init(4, 4, 8, 3, &mut rng);
    let x = random_matrix(&mut rng, 12, 4);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let probs = params.text.forward(&x).unwrap().probs;
    let index = EmbeddingIndex::new(
        Modality::Text,
        EmbeddingKind::Probability,
        probs,
        (0..12).map(|i| format!("t{i:02}")).collect(),
        labels.clone(),
    )
    .unwrap();
    let q = params.image.forward(&random_matrix(&mut rng, 1, 4)).unwrap().probs;
    for metric in Metric::ALL {
        let ranking = rank(q.row(0), "q", 1, &index, metric).unwrap();
        assert_eq!(ranking.items.len(), 12);
        let expected = brute_force_ap(&ranking.relevance()).unwrap();
        assert!((average_precision(&ranking, None).unwrap() - expected).abs() < 1e-12);
    }
}
