//! Write a small synthetic fvecs dataset and benchmark flat and HNSW
//! indexes on it.

use qxdb::bench::{run_benchmark, write_fvecs, BenchConfig, Block};
use qxdb::types::IndexChoice;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> qxdb::Result<()> {
    let dir = std::env::temp_dir().join(format!("qxdb-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| qxdb::Error::Io { path: dir.clone(), source: e })?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut block = |n: usize| Block::new(24, (0..n * 24).map(|_| rng.random::<f32>()).collect()).unwrap();
    write_fvecs(dir.join("base.fvecs"), &block(5_000))?;
    write_fvecs(dir.join("query.fvecs"), &block(200))?;

    for index in [IndexChoice::Flat, IndexChoice::Hnsw { m: 16, ef_construction: 100 }] {
        let config = BenchConfig {
            dataset: dir.display().to_string(),
            index,
            ef: vec![16, 64],
            ..BenchConfig::default()
        };
        let report = run_benchmark(&config)?;
        println!("{}", report.table());
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
