//! Brute-force reference implementations shared by the integration suites.
//! Everything here favors obviousness over speed so it can serve as an
//! independent check on the optimized library code.

#![allow(dead_code)]

use bte::barrier::ThresholdMode;
use bte::ingest::TagRelevanceMatrix;
use bte::preference::{PreferenceSeries, StdFlavor, ThresholdSeries};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-category exposure computed the slow way: one pass over the pairs per
/// category, keeping the same left-to-right addition order as the library so
/// results are bitwise comparable.
pub fn exposure_oracle(pairs: &[(u64, f64)], relevance: &TagRelevanceMatrix) -> Vec<f64> {
    (0..relevance.num_categories())
        .map(|cat| {
            let mut acc = 0.0;
            for &(item, rating) in pairs {
                for &(c, rel) in relevance.item_relevances(item) {
                    if c == cat {
                        acc += rel * rating;
                    }
                }
            }
            acc
        })
        .collect()
}

pub struct OracleBand {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub avg_upper: f64,
    pub avg_lower: f64,
}

/// Rolling bands recomputed from scratch at each step: collect the inclusive
/// look-back window, take its mean and standard deviation, and widen by k.
pub fn threshold_oracle(
    series: &PreferenceSeries,
    nu: usize,
    k: f64,
    flavor: StdFlavor,
) -> Vec<Option<OracleBand>> {
    let n_cat = series.num_categories();
    (0..series.len())
        .map(|t| {
            if t < nu {
                return None;
            }
            let mut upper = Vec::with_capacity(n_cat);
            let mut lower = Vec::with_capacity(n_cat);
            for i in 0..n_cat {
                let window: Vec<f64> = (t - nu..=t).map(|s| series.values[s][i]).collect();
                let mean = window.iter().sum::<f64>() / window.len() as f64;
                let denom = match flavor {
                    StdFlavor::Population => window.len(),
                    StdFlavor::Sample => window.len() - 1,
                } as f64;
                let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / denom;
                upper.push(mean + k * var.sqrt());
                lower.push(mean - k * var.sqrt());
            }
            let avg_upper = upper.iter().sum::<f64>() / n_cat as f64;
            let avg_lower = lower.iter().sum::<f64>() / n_cat as f64;
            Some(OracleBand {
                upper,
                lower,
                avg_upper,
                avg_lower,
            })
        })
        .collect()
}

fn bounds(
    thresholds: &ThresholdSeries,
    mode: ThresholdMode,
    t: usize,
    cat: usize,
) -> Option<(f64, f64)> {
    thresholds.band(t).map(|b| match mode {
        ThresholdMode::PerCategory => (b.upper[cat], b.lower[cat]),
        ThresholdMode::Averaged => (b.avg_upper, b.avg_lower),
    })
}

fn is_valid_window(
    series: &PreferenceSeries,
    thresholds: &ThresholdSeries,
    mode: ThresholdMode,
    cat: usize,
    tx: usize,
    ty: usize,
) -> bool {
    let Some((up_x, _)) = bounds(thresholds, mode, tx, cat) else {
        return false;
    };
    if series.values[tx][cat] <= up_x {
        return false;
    }
    let Some((_, lo_y)) = bounds(thresholds, mode, ty, cat) else {
        return false;
    };
    if series.values[ty][cat] >= lo_y {
        return false;
    }
    (tx + 1..ty).all(|t| {
        let Some((up, lo)) = bounds(thresholds, mode, t, cat) else {
            return false;
        };
        let c = series.values[t][cat];
        c > lo && c < up
    })
}

/// Exhaustive O(T^2) window detection: enumerate every candidate interval,
/// keep those whose endpoints cross the bands with a strictly-inside
/// interior, then select non-overlapping windows greedily in (entry, exit)
/// order. Returns `(entry, exit)` pairs per category.
pub fn windows_oracle(
    series: &PreferenceSeries,
    thresholds: &ThresholdSeries,
    mode: ThresholdMode,
) -> Vec<Vec<(usize, usize)>> {
    let t_len = series.len();
    let n_cat = series.num_categories();
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_cat];
    if thresholds.len() != t_len {
        return out;
    }
    for (cat, picked) in out.iter_mut().enumerate() {
        let mut valid = Vec::new();
        for tx in 0..t_len {
            for ty in tx + 1..t_len {
                if is_valid_window(series, thresholds, mode, cat, tx, ty) {
                    valid.push((tx, ty));
                }
            }
        }
        for &(tx, ty) in &valid {
            if picked.last().is_none_or(|&(_, prev_exit)| tx > prev_exit) {
                picked.push((tx, ty));
            }
        }
    }
    out
}

/// Builds a series directly from a value grid, with step indices as
/// timestamps. `values[t][i]` is category i at step t.
pub fn series_from_values(values: Vec<Vec<f64>>, n_cat: usize) -> PreferenceSeries {
    PreferenceSeries {
        user_id: 1,
        categories: (0..n_cat).map(|i| format!("cat{i}")).collect(),
        timestamps: (0..values.len() as u64).collect(),
        values,
    }
}

/// Random series of independent values in [0, hi).
pub fn random_series(
    rng: &mut ChaCha8Rng,
    t_len: usize,
    n_cat: usize,
    hi: f64,
) -> PreferenceSeries {
    let values = (0..t_len)
        .map(|_| (0..n_cat).map(|_| rng.gen::<f64>() * hi).collect())
        .collect();
    series_from_values(values, n_cat)
}

/// Random series of small integer values, which makes exact threshold ties
/// (c equal to a band bound) common at nu=1, k=1.
pub fn random_integer_series(rng: &mut ChaCha8Rng, t_len: usize, n_cat: usize) -> PreferenceSeries {
    let values = (0..t_len)
        .map(|_| (0..n_cat).map(|_| rng.gen_range(0..5) as f64).collect())
        .collect();
    series_from_values(values, n_cat)
}

/// Random tag-relevance table over `items` items and `n_cat` categories,
/// keeping roughly `density` of all possible pairs.
pub fn random_relevance(
    rng: &mut ChaCha8Rng,
    items: u64,
    n_cat: usize,
    density: f64,
) -> TagRelevanceMatrix {
    let labels: Vec<String> = (0..n_cat).map(|i| format!("cat{i}")).collect();
    let mut matrix = TagRelevanceMatrix::with_categories(&labels).expect("labels are distinct");
    for item in 0..items {
        for label in &labels {
            if rng.gen::<f64>() < density {
                matrix.insert(item, label, rng.gen::<f64>());
            }
        }
    }
    matrix
}
