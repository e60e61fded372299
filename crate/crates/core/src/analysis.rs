//! Post-hoc analyses over a finished run: score census, similarity bins,
//! threshold sweep, weight grid, and correlation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Difficulty, Report};
use crate::scoring::{retained, WeightConfig};

pub const CENSUS_THRESHOLDS: [f64; 6] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0];
pub const SIMILARITY_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("correlation needs equal-length inputs of at least 2 points (got {0} and {1})")]
    Length(usize, usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
}

/// Thresholds `0, 1, ..., 10`.
pub fn unit_thresholds() -> Vec<f64> {
    (0..=10).map(f64::from).collect()
}

/// The seven weight rows of the ablation table, equal weights first.
pub fn default_weight_grid() -> Vec<WeightConfig> {
    let w = |alpha, beta, gamma| WeightConfig { alpha, beta, gamma };
    vec![
        WeightConfig::equal(),
        w(1.0, 0.0, 0.0),
        w(0.0, 1.0, 0.0),
        w(0.0, 0.0, 1.0),
        w(0.5, 0.5, 0.0),
        w(0.5, 0.0, 0.5),
        w(0.0, 0.5, 0.5),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub threshold: f64,
    pub retained: usize,
    /// `100 * (total - retained) / total`
    pub filtered_pct: f64,
    /// Mean cosine of retained examples; `None` when nothing is retained or
    /// no cosines were supplied.
    pub mean_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCensus {
    pub total: usize,
    pub rows: Vec<CensusRow>,
}

/// `items` are `(rel, cosine)` pairs; pass `f64::NAN` for an unknown cosine.
pub fn score_census(items: &[(f64, f64)], thresholds: &[f64]) -> ScoreCensus {
    let total = items.len();
    let rels: Vec<f64> = items.iter().map(|p| p.0).collect();
    let rows = thresholds
        .iter()
        .map(|&threshold| {
            let kept = retained(&rels, threshold);
            let cosines: Vec<f64> = items
                .iter()
                .filter(|(rel, c)| *rel >= threshold && c.is_finite())
                .map(|p| p.1)
                .collect();
            CensusRow {
                threshold,
                retained: kept,
                filtered_pct: if total == 0 {
                    0.0
                } else {
                    100.0 * (total - kept) as f64 / total as f64
                },
                mean_cosine: (!cosines.is_empty()).then(|| cosines.iter().sum::<f64>() / cosines.len() as f64),
            }
        })
        .collect();
    ScoreCensus { total, rows }
}

/// Min-max scaling to [0, 1]. A constant input maps to all zeros.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    xs.iter()
        .map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBin {
    pub lo: f64,
    pub hi: f64,
    pub population: usize,
    pub ex_correct: usize,
    /// `None` for an empty bin.
    pub mean_ex: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBins {
    pub bins: Vec<SimilarityBin>,
}

/// Ten equal-width bins over [0, 1]; the last bin is closed on the right.
/// Inputs outside [0, 1] are clamped.
pub fn similarity_ex_bins(pairs: &[(f64, bool)]) -> SimilarityBins {
    let mut pop = [0usize; SIMILARITY_BINS];
    let mut hits = [0usize; SIMILARITY_BINS];
    for &(x, ex) in pairs {
        let x = x.clamp(0.0, 1.0);
        let i = ((x * SIMILARITY_BINS as f64).floor() as usize).min(SIMILARITY_BINS - 1);
        pop[i] += 1;
        hits[i] += usize::from(ex);
    }
    let bins = (0..SIMILARITY_BINS)
        .map(|i| SimilarityBin {
            lo: i as f64 / SIMILARITY_BINS as f64,
            hi: (i + 1) as f64 / SIMILARITY_BINS as f64,
            population: pop[i],
            ex_correct: hits[i],
            mean_ex: (pop[i] > 0).then(|| hits[i] as f64 / pop[i] as f64),
        })
        .collect();
    SimilarityBins { bins }
}

/// Pearson correlation coefficient.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(AnalysisError::Length(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One re-evaluated configuration of a sweep or grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub label: String,
    pub theta: f64,
    pub weights: WeightConfig,
    pub report: Report,
}

impl VariantRow {
    pub fn ex_overall(&self) -> Option<f64> {
        self.report.overall().ex
    }

    pub fn ex_for(&self, d: Difficulty) -> Option<f64> {
        self.report.buckets.iter().find(|b| b.label == d.as_str()).and_then(|b| b.ex)
    }
}

/// Re-evaluates the run at each threshold under fixed weights.
pub fn threshold_sweep<E, F>(thresholds: &[f64], weights: &WeightConfig, eval: F) -> Result<Vec<VariantRow>, E>
where
    F: Fn(&WeightConfig, f64) -> Result<Report, E> + Sync,
    E: Send,
{
    thresholds
        .par_iter()
        .map(|&theta| {
            Ok(VariantRow {
                label: format!("theta>={theta}"),
                theta,
                weights: *weights,
                report: eval(weights, theta)?,
            })
        })
        .collect()
}

/// Re-evaluates the run for each weight vector at a fixed threshold.
pub fn weight_grid<E, F>(grid: &[WeightConfig], theta: f64, eval: F) -> Result<Vec<VariantRow>, E>
where
    F: Fn(&WeightConfig, f64) -> Result<Report, E> + Sync,
    E: Send,
{
    grid.par_iter()
        .map(|w| {
            Ok(VariantRow {
                label: w.label(),
                theta,
                weights: *w,
                report: eval(w, theta)?,
            })
        })
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

pub fn census_csv(c: &ScoreCensus) -> String {
    let mut out = String::from("threshold,retained,filtered_pct,mean_cosine\n");
    for r in &c.rows {
        let _ = writeln!(out, "{},{},{:.2},{}", r.threshold, r.retained, r.filtered_pct, opt(r.mean_cosine, 4));
    }
    out
}

pub fn bins_csv(b: &SimilarityBins) -> String {
    let mut out = String::from("lo,hi,population,ex_correct,mean_ex\n");
    for bin in &b.bins {
        let _ = writeln!(
            out,
            "{:.1},{:.1},{},{},{}",
            bin.lo,
            bin.hi,
            bin.population,
            bin.ex_correct,
            opt(bin.mean_ex, 4)
        );
    }
    out
}

/// gnuplot-style columns: bin midpoint and mean EX; empty bins are skipped.
pub fn bins_dat(b: &SimilarityBins) -> String {
    let mut out = String::from("# midpoint mean_ex population\n");
    for bin in b.bins.iter().filter(|b| b.mean_ex.is_some()) {
        let _ = writeln!(
            out,
            "{:.2} {:.4} {}",
            (bin.lo + bin.hi) / 2.0,
            bin.mean_ex.unwrap_or_default(),
            bin.population
        );
    }
    out
}

pub fn variants_csv(rows: &[VariantRow]) -> String {
    let mut out = String::from("label,theta,alpha,beta,gamma,easy,medium,hard,extra,all,graded\n");
    for r in rows {
        let _ = write!(
            out,
            "\"{}\",{},{:.4},{:.4},{:.4}",
            r.label, r.theta, r.weights.alpha, r.weights.beta, r.weights.gamma
        );
        for d in Difficulty::ALL {
            let _ = write!(out, ",{}", opt(r.ex_for(d), 1));
        }
        let _ = writeln!(out, ",{},{}", opt(r.ex_overall(), 1), r.report.graded);
    }
    out
}

/// gnuplot-style columns: threshold and overall EX.
pub fn sweep_dat(rows: &[VariantRow]) -> String {
    let mut out = String::from("# theta ex_all\n");
    for r in rows {
        if let Some(ex) = r.ex_overall() {
            let _ = writeln!(out, "{} {:.4}", r.theta, ex);
        }
    }
    out
}

fn md_variants(out: &mut String, title: &str, rows: &[VariantRow]) {
    let _ = writeln!(out, "## {title}\n\n| config | easy | medium | hard | extra | all |\n|---|---|---|---|---|---|");
    for r in rows {
        let _ = write!(out, "| {} ", r.label);
        for d in Difficulty::ALL {
            let _ = write!(out, "| {} ", opt(r.ex_for(d), 1));
        }
        let _ = writeln!(out, "| {} |", opt(r.ex_overall(), 1));
    }
    out.push('\n');
}

/// Combined markdown summary.
pub fn markdown_report(
    census: &ScoreCensus,
    bins: &SimilarityBins,
    corr: Option<f64>,
    sweep: &[VariantRow],
    grid: &[VariantRow],
) -> String {
    let mut out = String::from("# Run analysis\n\n");
    let _ = writeln!(
        out,
        "## Score census ({} examples)\n\n| score | mean cosine | retained | filtered |\n|---|---|---|---|",
        census.total
    );
    for r in &census.rows {
        let _ = writeln!(
            out,
            "| >= {} | {} | {} | {:.2}% |",
            r.threshold,
            opt(r.mean_cosine, 4),
            r.retained,
            r.filtered_pct
        );
    }
    let _ = writeln!(out, "\n## Similarity vs EX\n\n| bin | population | mean EX |\n|---|---|---|");
    for b in &bins.bins {
        let _ = writeln!(out, "| {:.1}-{:.1} | {} | {} |", b.lo, b.hi, b.population, opt(b.mean_ex, 3));
    }
    let _ = writeln!(
        out,
        "\nPearson r (mean cosine vs EX across thresholds): {}\n",
        corr.map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"))
    );
    md_variants(&mut out, "Threshold sweep", sweep);
    md_variants(&mut out, "Weight grid", grid);
    out
}
