//! Regenerates the vector fixtures under `fixtures/`.
//!
//! ```text
//! cargo run -p pairforge --example make_fixtures -- fixtures
//! ```

use std::path::PathBuf;

use pairforge::corpus::{
    write_embedding_corpus, write_eval_queries, write_text_records, EmbeddingRecord, EvalQuery,
    TextRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DIM: usize = 8;
const CLUSTERS: usize = 3;
const TRAIN_PER_CLUSTER: usize = 20;
const QUERIES_PER_CLUSTER: usize = 10;
const NOISE: f64 = 1.2;
const SEED: u64 = 7;

const RADIUS: f64 = 3.0;
/// Normal of the reflection applied to every point.
const MIRROR: [f64; DIM] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
/// Offset shared by every point.
const OFFSET: [f64; DIM] = [6.0; DIM];

fn gaussian(rng: &mut ChaCha8Rng) -> [f64; DIM] {
    std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal))
}

fn distort(x: &[f64; DIM]) -> Vec<f64> {
    let nn: f64 = MIRROR.iter().map(|m| m * m).sum();
    let proj: f64 = x.iter().zip(MIRROR.iter()).map(|(a, m)| a * m).sum::<f64>() / nn;
    (0..DIM)
        .map(|i| x[i] - 2.0 * proj * MIRROR[i] + OFFSET[i])
        .collect()
}

fn main() -> pairforge::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let centers: Vec<[f64; DIM]> = (0..CLUSTERS)
        .map(|c| std::array::from_fn(|i| if i == c { RADIUS } else { 0.0 }))
        .collect();

    let point = |c: usize, rng: &mut ChaCha8Rng| {
        let e = gaussian(rng);
        let x: [f64; DIM] = std::array::from_fn(|i| centers[c][i] + NOISE * e[i]);
        distort(&x)
    };

    let mut train = Vec::new();
    for c in 0..CLUSTERS {
        for i in 0..TRAIN_PER_CLUSTER {
            let id = format!("c{c}-{i:02}");
            train.push(EmbeddingRecord {
                text: format!("cluster {c} item {i:02}"),
                vector: point(c, &mut rng),
                id,
            });
        }
    }

    let mut queries = Vec::new();
    let mut eval = Vec::new();
    for c in 0..CLUSTERS {
        for i in 0..QUERIES_PER_CLUSTER {
            let id = format!("q{c}-{i:02}");
            queries.push(EmbeddingRecord {
                text: format!("held-out query {c}/{i:02}"),
                vector: point(c, &mut rng),
                id: id.clone(),
            });
            eval.push(EvalQuery {
                query_text: format!("held-out query {c}/{i:02}"),
                query_id: id,
                relevant_id: format!("proto-{c}"),
            });
        }
    }

    let docs: Vec<EmbeddingRecord> = centers
        .iter()
        .enumerate()
        .map(|(c, center)| EmbeddingRecord {
            id: format!("proto-{c}"),
            text: format!("prototype {c}"),
            vector: distort(center),
        })
        .collect();

    let texts: Vec<TextRecord> = [
        "Kuala Lumpur ialah ibu negara Malaysia.",
        "Putrajaya ialah pusat pentadbiran kerajaan persekutuan.",
        "Gunung Kinabalu terletak di Sabah.",
        "Sungai Rajang ialah sungai terpanjang di Malaysia.",
        "Nasi lemak dimasak dengan santan.",
        "Menara Berkembar Petronas siap dibina pada tahun 1998.",
        "Pulau Pinang terkenal dengan makanan jalanan.",
        "Taman Negara ialah hutan hujan tropika yang tua.",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| TextRecord {
        id: format!("t{i}"),
        text: (*t).to_string(),
    })
    .collect();

    std::fs::create_dir_all(&out).map_err(|e| pairforge::Error::io(&out, e))?;
    write_embedding_corpus(out.join("toy_train.jsonl"), &train)?;
    write_embedding_corpus(out.join("toy_queries.jsonl"), &queries)?;
    write_embedding_corpus(out.join("toy_docs.jsonl"), &docs)?;
    write_eval_queries(out.join("toy_eval.jsonl"), &eval)?;
    write_text_records(out.join("texts.jsonl"), &texts)?;
    println!(
        "wrote {} train, {} query, {} doc records to {}",
        train.len(),
        queries.len(),
        docs.len(),
        out.display()
    );
    Ok(())
}
