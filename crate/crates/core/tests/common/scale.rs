//! Synthetic million-row table for the latency budget.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicelens::query::{CrossFilterState, QueryEngine, Selection};
use slicelens::table::{ingest_path, IngestOptions};

const SPEAKERS: [&str; 6] = ["ana", "bo", "cy", "dee", "eli", "fay"];

/// Writes `rows` rows of 12 columns: id, label, 4 continuous, 2 datetime,
/// 2 boolean, 1 nominal and 1 free-text column.
pub fn write_csv(path: &Path, rows: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "id,label,amplitude,duration,snr,pitch,recorded,uploaded,loud,clean,speaker,note")?;
    for i in 0..rows {
        let day = 1_600_000_000 + rng.gen_range(0..30_000_000u64);
        writeln!(
            w,
            "i{i},l{},{:.4},{:.2},{:.1},{:.1},{},{},{},{},{},n{}",
            rng.gen_range(0..10),
            rng.gen::<f64>(),
            rng.gen_range(0.5..20.0),
            rng.gen_range(-5.0..40.0),
            rng.gen_range(80.0..300.0),
            chrono::DateTime::from_timestamp(day as i64, 0).unwrap().to_rfc3339(),
            chrono::DateTime::from_timestamp(day as i64 + 3600, 0).unwrap().to_rfc3339(),
            rng.gen_bool(0.3),
            rng.gen_bool(0.8),
            SPEAKERS[rng.gen_range(0..SPEAKERS.len())],
            rng.gen_range(0..1000),
        )?;
    }
    w.flush()
}

pub struct ScaleRun {
    pub ingest_and_index: Duration,
    pub latencies: Vec<Duration>,
}

impl ScaleRun {
    pub fn p95(&self) -> Duration {
        let mut l = self.latencies.clone();
        l.sort();
        l[(l.len() * 95).div_ceil(100) - 1]
    }
}

/// Ingests the csv, builds the base index, then times `samples` histogram
/// recomputes, each under a different selection.
pub fn run(path: &Path, samples: usize) -> ScaleRun {
    let start = Instant::now();
    let table = ingest_path(path, &IngestOptions::new("id").label("label")).expect("ingest");
    let engine = QueryEngine::new(table);
    engine.scope("none").expect("index");
    let ingest_and_index = start.elapsed();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut latencies = Vec::with_capacity(samples);
    for i in 0..samples {
        let lo = rng.gen_range(0.0..0.8);
        let mut state =
            CrossFilterState::new().select("raw::amplitude", Selection::Range { min: lo, max: lo + rng.gen_range(0.05..0.2) });
        if i % 2 == 1 {
            let who = SPEAKERS[i % SPEAKERS.len()].to_string();
            state = state.select("raw::speaker", Selection::Categories { values: vec![who] });
        }
        if i % 3 == 2 {
            state = state.select("raw::loud", Selection::Categories { values: vec!["true".into()] });
        }
        let t = Instant::now();
        let h = engine.histograms(&state).expect("histograms");
        latencies.push(t.elapsed());
        assert!(h.filtered_rows <= h.total_rows);
    }
    ScaleRun { ingest_and_index, latencies }
}
