//! Property tests over the public API.

mod common;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::collection::vec;
use proptest::prelude::*;

use t2i_eval::alignment::{counting_alignment, positional_alignment, r_precision, soa};
use t2i_eval::artifact_io::{
    load_matrix, save_matrix, CountRecord, Detection, DetectionRecord, LabelVector, MatrixArtifact,
    MatrixRole, PositionalTriplet, RetrievalRecord,
};
use t2i_eval::calibration::{
    fit_temperature, softmax_with_temperature, Temperature, TemperatureSearch,
};
use t2i_eval::caption_prep::{make_mismatched_caption, match_positional_words, WordSetConfig};
use t2i_eval::fidelity::{fit_gaussian_matrix, inception_score_rows};
use t2i_eval::ranking::{
    default_directions, rank_metric, rank_table, AspectSpec, Direction, MetricTable,
};

const FILLER: [&str; 8] = ["a", "red", "dog", "sits", "the", "box", "tall", "tree"];

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| vec(vec(-1e6f64..1e6, c), r))
}

fn prob_matrix(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(0.01f64..10.0, k), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

fn benchmark_table(n: usize) -> impl Strategy<Value = MetricTable> {
    let metrics = [
        "IS_star", "FID", "RP", "SOA_C", "SOA_I", "O_IS", "O_FID", "CA", "PA",
    ];
    vec(vec(0u8..6, metrics.len()), n).prop_map(move |rows| {
        MetricTable::new(
            (0..rows.len()).map(|i| format!("m{i}")).collect(),
            metrics.iter().map(|m| m.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|&v| f64::from(v)).collect())
                .collect(),
            default_directions(),
        )
        .unwrap()
    })
}

fn caption_words() -> impl Strategy<Value = Vec<String>> {
    let config = WordSetConfig::default();
    let pool: Vec<String> = FILLER
        .iter()
        .map(|w| w.to_string())
        .chain(config.words.iter().cloned())
        .chain(["front", "top", "of", "in"].map(String::from))
        .collect();
    vec(proptest::sample::select(pool), 0..12)
}

/// Greedy longest-first matcher over whitespace tokens.
fn naive_matches(caption: &str, words: &[String]) -> Vec<String> {
    let tokens: Vec<String> = caption
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect();
    let mut sorted: Vec<&String> = words.iter().collect();
    sorted.sort_by_key(|w| std::cmp::Reverse(w.split(' ').count()));
    let mut found = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = sorted.iter().find(|w| {
            let parts: Vec<&str> = w.split(' ').collect();
            tokens.len() - i >= parts.len() && parts.iter().zip(&tokens[i..]).all(|(p, t)| p == t)
        });
        match hit {
            Some(w) => {
                if !found.contains(*w) {
                    found.push((*w).clone());
                }
                i += w.split(' ').count();
            }
            None => i += 1,
        }
    }
    found
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_round_trip_is_byte_identical(rows in matrix_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let matrix = MatrixArtifact::from_rows(MatrixRole::Features, &rows, "prop").unwrap();
        save_matrix(&matrix, dir.path().join("m")).unwrap();
        let loaded = load_matrix(dir.path().join("m.json")).unwrap();
        prop_assert_eq!(&loaded, &matrix);
        let first = std::fs::read(dir.path().join("m.bin")).unwrap();
        save_matrix(&loaded, dir.path().join("m")).unwrap();
        prop_assert_eq!(first, std::fs::read(dir.path().join("m.bin")).unwrap());
    }

    #[test]
    fn softmax_is_translation_invariant(
        z in vec(-50f64..50.0, 2..12),
        shift in -100f64..100.0,
        t in 0.05f64..20.0,
    ) {
        let t = Temperature::new(t).unwrap();
        let base = softmax_with_temperature(&z, t).unwrap();
        let moved: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (a, b) in base.iter().zip(softmax_with_temperature(&moved, t).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn single_split_is_is_permutation_invariant(rows in prob_matrix(12, 5), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = inception_score_rows(&rows, 1).unwrap().mean;
        let b = inception_score_rows(&common::shuffled(&rows, &mut rng), 1).unwrap().mean;
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gaussian_fit_ignores_row_order(rows in vec(vec(-10f64..10.0, 3), 2..20), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let shuffled = common::shuffled(&rows, &mut rng);
        let to_matrix = |r: &[Vec<f64>]| DMatrix::from_fn(r.len(), 3, |i, j| r[i][j]);
        let a = fit_gaussian_matrix(&to_matrix(&rows)).unwrap();
        let b = fit_gaussian_matrix(&to_matrix(&shuffled)).unwrap();
        prop_assert!((a.mu() - b.mu()).amax() <= 1e-12);
        prop_assert!((a.sigma() - b.sigma()).amax() <= 1e-12);
    }

    #[test]
    fn rp_ignores_monotone_rescaling(
        sims in vec(vec(-1f64..1.0, 4), 1..30),
        gts in vec(0usize..4, 30),
    ) {
        let records: Vec<RetrievalRecord> = sims
            .iter()
            .zip(&gts)
            .enumerate()
            .map(|(i, (s, &gt))| RetrievalRecord { query_id: i.to_string(), gt_index: gt, similarities: s.clone() })
            .collect();
        let mapped: Vec<RetrievalRecord> = records
            .iter()
            .map(|r| RetrievalRecord { similarities: r.similarities.iter().map(|v| (3.0 * v).exp()).collect(), ..r.clone() })
            .collect();
        prop_assert_eq!(r_precision(&records).unwrap(), r_precision(&mapped).unwrap());
    }

    #[test]
    fn pa_ignores_monotone_rescaling(pairs in vec((0usize..3, -1f64..1.0, -1f64..1.0), 1..40)) {
        let words: Vec<String> = ["left", "right", "near"].map(String::from).to_vec();
        let triplets: Vec<PositionalTriplet> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(w, m, x))| PositionalTriplet {
                word: words[w].clone(),
                triplet_id: i.to_string(),
                sim_matched: m,
                sim_mismatched: x,
            })
            .collect();
        let mapped: Vec<PositionalTriplet> = triplets
            .iter()
            .map(|t| PositionalTriplet { sim_matched: 2.0 * t.sim_matched + 5.0, sim_mismatched: 2.0 * t.sim_mismatched + 5.0, ..t.clone() })
            .collect();
        prop_assert_eq!(
            positional_alignment(&triplets, &words).unwrap().pa,
            positional_alignment(&mapped, &words).unwrap().pa
        );
    }

    #[test]
    fn soa_averages_agree_for_balanced_classes(
        per_class in 1usize..6,
        scores in vec(0f64..1.0, 18),
    ) {
        let classes = ["cat", "dog", "bus"];
        let records: Vec<DetectionRecord> = (0..per_class * 3)
            .map(|i| DetectionRecord {
                image_id: i.to_string(),
                expected_class: classes[i % 3].into(),
                detections: vec![Detection { class: classes[i % 3].into(), score: scores[i] }],
            })
            .collect();
        let result = soa(&records, 0.5).unwrap();
        prop_assert!((result.soa_c - result.soa_i).abs() <= 1e-12);
    }

    #[test]
    fn ca_duplicate_and_scale_properties(
        counts in vec((1u8..10, 0u8..12, 1u8..4, 0u8..5), 1..20),
        lambda in 0.1f64..10.0,
    ) {
        let record = |i: usize, &(g1, p1, g2, p2): &(u8, u8, u8, u8), s: f64| CountRecord {
            caption_id: i.to_string(),
            gt_counts: BTreeMap::from([("a".into(), s * f64::from(g1)), ("b".into(), s * f64::from(g2))]),
            pred_counts: BTreeMap::from([("a".into(), s * f64::from(p1)), ("b".into(), s * f64::from(p2))]),
        };
        let base: Vec<CountRecord> = counts.iter().enumerate().map(|(i, c)| record(i, c, 1.0)).collect();
        let doubled: Vec<CountRecord> = base.iter().chain(&base).cloned().collect();
        let scaled: Vec<CountRecord> = counts.iter().enumerate().map(|(i, c)| record(i, c, lambda)).collect();
        let ca = counting_alignment(&base).unwrap();
        prop_assert!((counting_alignment(&doubled).unwrap() - ca).abs() <= 1e-12);
        prop_assert!((counting_alignment(&scaled).unwrap() - lambda * ca).abs() <= 1e-9 * (1.0 + lambda * ca));
    }

    #[test]
    fn ranks_sum_to_triangular_number(values in vec(0u8..5, 1..15), lower in any::<bool>()) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let dir = if lower { Direction::LowerBetter } else { Direction::HigherBetter };
        let n = values.len() as f64;
        let total: f64 = rank_metric(&values, dir).unwrap().iter().sum();
        prop_assert_eq!(total, n * (n + 1.0) / 2.0);
    }

    #[test]
    fn rs_ignores_monotone_transforms_and_row_order(table in benchmark_table(6), seed in any::<u64>()) {
        let spec = AspectSpec::default();
        let base = rank_table(&table, &spec).unwrap();

        let transformed = MetricTable::new(
            table.methods().to_vec(),
            table.metrics().to_vec(),
            table
                .methods()
                .iter()
                .map(|m| table.metrics().iter().map(|c| (table.value(m, c).unwrap() * 0.5).exp() - 7.0).collect())
                .collect(),
            default_directions(),
        )
        .unwrap();
        prop_assert_eq!(&rank_table(&transformed, &spec).unwrap().rs, &base.rs);

        let mut rng = common::rng(seed);
        let shuffled = common::shuffled(table.methods(), &mut rng);
        let order: Vec<&str> = shuffled.iter().map(String::as_str).collect();
        let permuted = rank_table(&table.restrict(&order).unwrap(), &spec).unwrap();
        for method in table.methods() {
            prop_assert_eq!(permuted.rs_of(method), base.rs_of(method));
        }
    }

    #[test]
    fn adding_a_strictly_worst_method_raises_every_rank(table in benchmark_table(5)) {
        let spec = AspectSpec::default();
        let base = rank_table(&table, &spec).unwrap();
        let directions = default_directions();
        let mut methods = table.methods().to_vec();
        methods.push("worst".into());
        let mut values: Vec<Vec<f64>> = table
            .methods()
            .iter()
            .map(|m| table.metrics().iter().map(|c| table.value(m, c).unwrap()).collect())
            .collect();
        values.push(
            table
                .metrics()
                .iter()
                .map(|c| match directions[c] {
                    Direction::HigherBetter => -1.0,
                    Direction::LowerBetter => 100.0,
                })
                .collect(),
        );
        let grown = MetricTable::new(methods, table.metrics().to_vec(), values, directions).unwrap();
        let after = rank_table(&grown, &spec).unwrap();
        for method in table.methods() {
            for metric in table.metrics() {
                prop_assert_eq!(after.rank_of(method, metric).unwrap(), base.rank_of(method, metric).unwrap() + 1.0);
            }
            let aspects = spec.aspects.len() as f64;
            prop_assert_eq!(after.rs_of(method).unwrap(), base.rs_of(method).unwrap() + aspects);
        }
        prop_assert_eq!(after.rs_of("worst").unwrap(), spec.aspects.len() as f64);
    }

    #[test]
    fn caption_matching_is_greedy_longest_first_and_case_blind(words in caption_words()) {
        let config = WordSetConfig::default();
        let caption = words.join(" ");
        let found = match_positional_words(&caption, &config);
        prop_assert_eq!(&found, &naive_matches(&caption, &config.words));
        prop_assert_eq!(&match_positional_words(&caption.to_uppercase(), &config), &found);
    }

    #[test]
    fn mismatch_is_an_involution_on_symmetric_pairs(
        before in vec(proptest::sample::select(FILLER.to_vec()), 0..5),
        after in vec(proptest::sample::select(FILLER.to_vec()), 0..5),
        pair in 0usize..16,
    ) {
        let config = WordSetConfig::default();
        let (word, antonym) = config.antonym_map.get_index(pair).unwrap();
        prop_assume!(config.antonym_map.get(antonym) == Some(word));
        prop_assume!(config.words.contains(word) && config.words.contains(antonym));
        let caption = [before.join(" "), word.clone(), after.join(" ")].join(" ");
        let once = make_mismatched_caption(&caption, word, &config).unwrap();
        prop_assert_eq!(make_mismatched_caption(&once, antonym, &config).unwrap(), caption);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn temperature_fit_ignores_sample_order(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let logits = common::logit_rows(&mut rng, 60, 4, 3.0);
        let labels: Vec<usize> = logits.iter().map(|r| (r[0].abs() * 10.0) as usize % 4).collect();
        let mut pairs: Vec<(Vec<f64>, usize)> = logits.iter().cloned().zip(labels.iter().copied()).collect();
        pairs = common::shuffled(&pairs, &mut rng);
        let (shuffled_logits, shuffled_labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let search = TemperatureSearch::default();
        let a = fit_temperature(&logits, &LabelVector::new(labels), search).unwrap();
        let b = fit_temperature(&shuffled_logits, &LabelVector::new(shuffled_labels), search).unwrap();
        prop_assert_eq!(a.value().to_bits(), b.value().to_bits());
    }
}
