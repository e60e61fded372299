//! Reruns the fixture once per ablation and prints EX by difficulty.

use synthshot::demo::write_fixture;
use synthshot::pipeline::{Runner, ABLATIONS};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(&dir.path().join("data")).unwrap();
    let runner = Runner::new(fx.config(), &dir.path().join("run")).unwrap();
    runner.ingest(false).unwrap();
    let rows = runner.ablation_grid(&ABLATIONS).unwrap();
    println!("{:<18} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "easy", "medium", "hard", "extra", "all");
    for (name, report) in rows {
        let cells: Vec<String> =
            report.buckets.iter().map(|b| b.ex.map_or("-".into(), |x| format!("{x:.1}"))).collect();
        println!("{name:<18} {:>6} {:>6} {:>6} {:>6} {:>6}", cells[0], cells[1], cells[2], cells[3], cells[4]);
    }
}
