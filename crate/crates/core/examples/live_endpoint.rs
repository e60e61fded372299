//! A small run against an OpenAI-compatible endpoint.
//!
//! ```text
//! OPENAI_API_KEY=... cargo run --example live_endpoint -- https://api.openai.com/v1 /data/spider 10
//! ```
//! The Spider directory must hold `tables.json`, `dev.json` and `database/`.

use std::path::PathBuf;

use synthshot::llm::HttpConfig;
use synthshot::pipeline::{BackendConfig, RunConfig, Runner};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [base, spider, rest @ ..] = args.as_slice() else {
        eprintln!("usage: live_endpoint BASE_URL SPIDER_DIR [LIMIT] [MODEL]");
        std::process::exit(2);
    };
    let spider = PathBuf::from(spider);
    let mut http = HttpConfig::new(base.clone());
    http.api_key_env = Some("OPENAI_API_KEY".into());
    http.requests_per_minute = Some(60);
    let mut cfg = RunConfig::new(
        spider.join("tables.json"),
        spider.join("dev.json"),
        spider.join("database"),
        BackendConfig::Http(http),
    );
    cfg.limit = Some(rest.first().and_then(|s| s.parse().ok()).unwrap_or(10));
    if let Some(model) = rest.get(1) {
        cfg.generation.params.model = model.clone();
        cfg.scoring.params.model = model.clone();
        cfg.inference.params.model = model.clone();
    }
    let run_dir = std::env::temp_dir().join("synthshot-live");
    let runner = match Runner::new(cfg, &run_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };
    match runner.run(false) {
        Ok(s) => {
            print!("{}", s.report.unwrap().render_text());
            println!("artifacts in {}", run_dir.display());
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
