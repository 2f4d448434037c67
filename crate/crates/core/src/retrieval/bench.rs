use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::encoders::instrument;
use crate::error::{Error, Result};
use crate::numcore::DenseVector;
use crate::sgparse::SceneGraph;
use crate::training::rng::named_rng;
use crate::training::ModelParams;

use super::index::{build_index, query, EmbeddingRecord, IndexKind};

/// Median latencies at one index size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub encode_ms: f64,
    pub matmul_ms: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Caption encodings per query, summed over every timed query.
    pub caption_encodes: u64,
    /// Image encodings triggered while answering queries; zero for a
    /// dual encoder.
    pub image_encodes: u64,
    pub queries: usize,
}

impl BenchReport {
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,encode_ms,matmul_ms,trials\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.size, r.encode_ms, r.matmul_ms, r.trials).unwrap();
        }
        s
    }

    /// Least-squares slope of log(matmul_ms) against log(size).
    pub fn scan_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.matmul_ms > 0.0)
            .map(|r| ((r.size as f64).ln(), r.matmul_ms.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times one caption encoding and one full index scan per trial against
/// synthetic image indexes of each size.
pub fn bench_latency(
    model: &ModelParams,
    caption: &SceneGraph,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("index sizes must be positive"));
    }
    let dim = model.config.dim;
    let mut report = BenchReport {
        rows: Vec::with_capacity(sizes.len()),
        caption_encodes: 0,
        image_encodes: 0,
        queries: 0,
    };
    for &size in sizes {
        let mut rng = named_rng(seed, &format!("bench.{size}"));
        let records: Vec<EmbeddingRecord> = (0..size)
            .map(|i| EmbeddingRecord {
                id: format!("img{i}"),
                vector: DenseVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .expect("finite values"),
            })
            .collect();
        let idx = build_index(&records, IndexKind::Image)?;
        // warm-up outside the timed trials
        query(&model.encode_caption(caption)?.t, &idx, 10)?;

        let mut encode = Vec::with_capacity(trials);
        let mut scan = Vec::with_capacity(trials);
        for _ in 0..trials {
            let before = instrument::counts();
            let t = Instant::now();
            let q = model.encode_caption(caption)?.t;
            encode.push(ms(t));
            let t = Instant::now();
            let hits = query(&q, &idx, 10)?;
            scan.push(ms(t));
            std::hint::black_box(hits);
            let after = instrument::counts();
            report.caption_encodes += after.captions - before.captions;
            report.image_encodes += after.images - before.images;
            report.queries += 1;
        }
        report.rows.push(BenchRow {
            size,
            encode_ms: median(encode),
            matmul_ms: median(scan),
            trials,
        });
    }
    Ok(report)
}
