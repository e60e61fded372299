//! Score census, similarity/EX bins, threshold sweep and weight grid.

use synthshot::demo::write_fixture;
use synthshot::pipeline::{Runner, ANALYSIS_DIR};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(&dir.path().join("data")).unwrap();
    let runner = Runner::new(fx.config(), &dir.path().join("run")).unwrap();
    runner.run(false).unwrap();
    let out = runner.analyze().unwrap();

    println!("census over {} examples", out.census.total);
    for row in &out.census.rows {
        println!(
            "  >= {:<4} retained {:>3} filtered {:>6.2}%  mean cos {}",
            row.threshold,
            row.retained,
            row.filtered_pct,
            row.mean_cosine.map_or("-".into(), |c| format!("{c:.3}"))
        );
    }
    println!("sweep");
    for v in &out.sweep {
        println!("  {:<10} EX {}", v.label, v.ex_overall().map_or("-".into(), |x| format!("{x:.1}")));
    }
    println!("weights");
    for v in &out.grid {
        println!("  {:<16} EX {}", v.label, v.ex_overall().map_or("-".into(), |x| format!("{x:.1}")));
    }
    println!("correlation: {:?}", out.correlation);
    print!("{}", std::fs::read_to_string(runner.path(ANALYSIS_DIR).join("similarity_bins.csv")).unwrap());
}
