//! Records a run, then reproduces it offline from the response cache alone.

use std::fs;

use synthshot::demo::write_fixture;
use synthshot::pipeline::{BackendConfig, Runner, CACHE_FILE, EVAL_FILE};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(&dir.path().join("data")).unwrap();

    let recorded = dir.path().join("recorded");
    let r = Runner::new(fx.config(), &recorded).unwrap();
    r.run(false).unwrap();
    let lines = fs::read_to_string(recorded.join(CACHE_FILE)).unwrap().lines().count();
    println!("recorded {lines} responses ({} backend calls)", r.clients.backend_calls());

    let mut cfg = fx.config();
    cfg.backend = BackendConfig::Replay;
    cfg.cache_file = Some(recorded.join(CACHE_FILE));
    let replayed = dir.path().join("replayed");
    let r = Runner::new(cfg.clone(), &replayed).unwrap();
    r.run(false).unwrap();
    let same = fs::read(recorded.join(EVAL_FILE)).unwrap() == fs::read(replayed.join(EVAL_FILE)).unwrap();
    println!("replayed evaluation identical: {same}");

    // A prompt that was never recorded is a hard miss, not a silent call.
    cfg.theta = 10.0;
    let r = Runner::new(cfg, &dir.path().join("miss")).unwrap();
    match r.run(false) {
        Ok(s) => println!("cases with failures under a new threshold: {}", s.failed_cases()),
        Err(e) => println!("replay stopped: {e}"),
    }
}
