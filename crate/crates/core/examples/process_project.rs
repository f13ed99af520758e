//! Generate a small audio project, run its plugin pipeline, then run it again
//! to show that everything comes from the cache the second time.
//!
//!     cargo run --example process_project [instances]

use slicelens::demo::{self, DemoOptions};
use slicelens::server::{process, ProjectConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instances = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let dir = tempfile::tempdir()?;
    let project = demo::create(dir.path(), &DemoOptions { instances, ..Default::default() })?;
    let config = ProjectConfig::load(&project.config)?;

    for round in ["cold", "warm"] {
        let started = std::time::Instant::now();
        let processed = process(&config, None)?;
        println!("{round}: {} in {:.2?}", processed.report.summary(), started.elapsed());
        if round == "warm" {
            let table = processed.engine.table();
            println!("{} rows ({} instances x {} scopes)", table.row_count(), table.base_row_count(), 1 + config.transforms.len());
            for d in table.schema() {
                println!("  {:<40} {:?}", d.id, d.dtype);
            }
        }
    }
    Ok(())
}
