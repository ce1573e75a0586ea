//! Seeded fixture builders shared by the integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use t2i_eval::artifact_io::{save_matrix, MatrixArtifact, MatrixRole};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Probability rows; roughly a third of them contain exact zeros.
pub fn prob_rows(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let sparse = rng.gen_bool(0.3);
            let mut row: Vec<f64> = (0..k)
                .map(|_| {
                    if sparse && rng.gen_bool(0.4) {
                        0.0
                    } else {
                        rng.gen_range(-3.0f64..3.0).exp()
                    }
                })
                .collect();
            if row.iter().all(|&v| v == 0.0) {
                row[rng.gen_range(0..k)] = 1.0;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect()
}

pub fn normal_rows(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
    mean: &[f64],
    std: &[f64],
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..k)
                .map(|j| Normal::new(mean[j], std[j]).unwrap().sample(rng))
                .collect()
        })
        .collect()
}

pub fn logit_rows(rng: &mut impl Rng, n: usize, k: usize, std: f64) -> Vec<Vec<f64>> {
    normal_rows(rng, n, k, &vec![0.0; k], &vec![std; k])
}

fn write_jsonl(path: &Path, records: &[serde_json::Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

fn save(dir: &Path, name: &str, role: MatrixRole, rows: &[Vec<f64>]) -> PathBuf {
    let path = dir.join(name);
    let matrix = MatrixArtifact::from_rows(role, rows, name).unwrap();
    save_matrix(&matrix, &path).unwrap();
    path.with_extension("json")
}

/// Writes artifacts for three methods plus a calibration split and returns
/// the path of a TOML run config enabling every metric.
pub fn write_run_fixture(dir: &Path, seed: u64) -> PathBuf {
    let mut rng = rng(seed);
    let k = 10;
    let d = 6;
    let real = normal_rows(&mut rng, 80, d, &[0.0; 6], &[1.0; 6]);
    save(dir, "real_features", MatrixRole::Features, &real);
    let real_crops = normal_rows(&mut rng, 50, d, &[0.5; 6], &[1.0; 6]);
    save(dir, "real_crop_features", MatrixRole::Features, &real_crops);

    let cal_logits = logit_rows(&mut rng, 120, k, 2.0);
    save(dir, "cal_logits", MatrixRole::Logits, &cal_logits);
    let labels: Vec<usize> = (0..120).map(|_| rng.gen_range(0..k)).collect();
    fs::write(
        dir.join("cal_labels.json"),
        serde_json::to_string(&labels).unwrap(),
    )
    .unwrap();

    let words = ["left", "right", "above", "below", "near"];
    let classes = ["person", "dog", "car"];
    let mut methods = String::new();
    for (m, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
        let shift = 0.3 * m as f64;
        let sub = dir.join(name);
        fs::create_dir_all(&sub).unwrap();
        save(
            &sub,
            "probs",
            MatrixRole::Probabilities,
            &prob_rows(&mut rng, 60, k),
        );
        save(
            &sub,
            "logits",
            MatrixRole::Logits,
            &logit_rows(&mut rng, 60, k, 1.0 + shift),
        );
        let gen = normal_rows(&mut rng, 80, d, &[shift; 6], &[1.0 + shift; 6]);
        save(&sub, "gen_features", MatrixRole::Features, &gen);
        save(
            &sub,
            "crop_probs",
            MatrixRole::Probabilities,
            &prob_rows(&mut rng, 40, k),
        );
        let gen_crops = normal_rows(&mut rng, 50, d, &[shift; 6], &[1.0; 6]);
        save(&sub, "gen_crop_features", MatrixRole::Features, &gen_crops);

        let retrieval: Vec<_> = (0..30)
            .map(|i| {
                let sims: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                json!({"query_id": format!("q{i}"), "gt_index": rng.gen_range(0..5), "similarities": sims})
            })
            .collect();
        write_jsonl(&sub.join("retrieval.jsonl"), &retrieval);

        let detections: Vec<_> = (0..30)
            .map(|i| {
                let expected = classes.choose(&mut rng).unwrap();
                let dets: Vec<_> = (0..rng.gen_range(0..3))
                    .map(|_| json!({"class": classes.choose(&mut rng).unwrap(), "score": rng.gen_range(0.0..1.0)}))
                    .collect();
                json!({"image_id": format!("img{i}"), "expected_class": expected, "detections": dets})
            })
            .collect();
        write_jsonl(&sub.join("detections.jsonl"), &detections);

        let triplets: Vec<_> = (0..30)
            .map(|i| {
                json!({
                    "word": words.choose(&mut rng).unwrap(),
                    "triplet_id": format!("t{i}"),
                    "sim_matched": rng.gen_range(0.0..1.0),
                    "sim_mismatched": rng.gen_range(0.0..1.0),
                })
            })
            .collect();
        write_jsonl(&sub.join("triplets.jsonl"), &triplets);

        let counts: Vec<_> = (0..20)
            .map(|i| {
                json!({
                    "caption_id": format!("c{i}"),
                    "gt_counts": {"person": rng.gen_range(1..8), "dog": rng.gen_range(1..4)},
                    "pred_counts": {"person": rng.gen_range(0.0..9.0)},
                })
            })
            .collect();
        write_jsonl(&sub.join("counts.jsonl"), &counts);

        methods.push_str(&format!(
            r#"
[[methods]]
name = "{name}"
[methods.artifacts]
probs = "{name}/probs.json"
logits = "{name}/logits.json"
real_features = "real_features.json"
gen_features = "{name}/gen_features.json"
crop_probs = "{name}/crop_probs.json"
real_crop_features = "real_crop_features.json"
gen_crop_features = "{name}/gen_crop_features.json"
retrieval = "{name}/retrieval.jsonl"
detections = "{name}/detections.jsonl"
triplets = "{name}/triplets.jsonl"
counts = "{name}/counts.jsonl"
"#
        ));
    }

    let config = format!(
        r#"output_dir = "out"
metrics = ["is", "is_star", "fid", "o_is", "o_fid", "rp", "soa", "pa", "ca", "rank"]

[parameters]
n_splits = 4
temperature = {{ calibration = {{ logits = "cal_logits.json", labels = "cal_labels.json", split_id = "fixture-val" }} }}
{methods}"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    path
}

/// Rank-only config over a CSV metric table.
pub fn write_rank_config(dir: &Path, table: &Path) -> PathBuf {
    let path = dir.join("rank.json");
    let config = json!({
        "output_dir": "rank_out",
        "metrics": ["rank"],
        "table": table,
    });
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

pub fn shuffled<T: Clone>(items: &[T], rng: &mut impl Rng) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(rng);
    out
}
