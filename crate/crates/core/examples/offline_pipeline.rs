//! The whole pipeline on the bundled fixture with scripted model replies.
//!
//! `cargo run --example offline_pipeline [RUN_DIR]`

use std::path::PathBuf;

use synthshot::demo::write_fixture;
use synthshot::pipeline::Runner;

fn main() {
    let root: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("synthshot-offline"), PathBuf::from);
    let fx = write_fixture(&root.join("data")).unwrap();
    let runner = Runner::new(fx.config(), &root.join("run")).unwrap();
    let summary = runner.run(false).unwrap();
    for s in &summary.stages {
        println!("{:<10} computed {} reused {} failed {}", s.stage, s.computed, s.reused, s.failed.len());
    }
    print!("{}", summary.report.unwrap().render_text());
    println!("backend calls: {}", runner.clients.backend_calls());
    println!("artifacts in {}", root.join("run").display());

    // Same directory again: everything comes from disk and the cache.
    let again = Runner::new(fx.config(), &root.join("run")).unwrap();
    again.run(false).unwrap();
    println!("backend calls on rerun: {}", again.clients.backend_calls());
}
