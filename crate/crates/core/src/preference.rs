//! Revealed preference per category and rolling interaction thresholds.
//!
//! For one user, each time bin collapses into a per-category score
//!
//! ```text
//! c[t][i] = sum over rated items j of relevance(j, i) * rating(t, j)
//! ```
//!
//! so a category's value at step t is the relevance-weighted sum of that
//! bin's ratings. Thresholds then track each category's own recent history:
//! over the inclusive window `c[t-nu ..= t][i]` (nu+1 values),
//!
//! ```text
//! x[t][i] = mean + k * std        (upper)
//! y[t][i] = mean - k * std        (lower)
//! ```
//!
//! with population standard deviation by default. The first `nu` steps are
//! warm-up and carry no thresholds. `X[t]`/`Y[t]` are the unweighted means of
//! the per-category bounds at step t and serve as a coarser averaged mode.

use crate::error::{BteError, Result};
use crate::ingest::{RatingBin, TagRelevanceMatrix, TimeBinnedRatings};

/// Per-category revealed preference of one user, one row per time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSeries {
    pub user_id: u64,
    /// Column labels, in relevance-matrix order.
    pub categories: Vec<String>,
    /// Representative second of each step.
    pub timestamps: Vec<u64>,
    /// `values[t][i]` is category i at step t; rows are dense.
    pub values: Vec<Vec<f64>>,
}

impl PreferenceSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }
}

/// Relevance-weighted rating mass per category for a batch of
/// `(item, rating)` pairs. This one accumulation backs both the revealed
/// preference series and the simulator's exposure-driven drift.
pub fn category_exposure(pairs: &[(u64, f64)], relevance: &TagRelevanceMatrix) -> Vec<f64> {
    let mut acc = vec![0.0; relevance.num_categories()];
    for &(item, rating) in pairs {
        for &(cat, rel) in relevance.item_relevances(item) {
            acc[cat] += rel * rating;
        }
    }
    acc
}

/// Collapses one bin into its per-category score vector. Items without
/// relevance entries contribute nothing; an empty category set yields an
/// empty vector. Linear in the ratings and additive across bins.
pub fn revealed_preference(bin: &RatingBin, relevance: &TagRelevanceMatrix) -> Vec<f64> {
    category_exposure(&bin.ratings, relevance)
}

/// Maps a binned history to its preference series, one row per bin.
pub fn preference_series(
    binned: &TimeBinnedRatings,
    relevance: &TagRelevanceMatrix,
) -> PreferenceSeries {
    PreferenceSeries {
        user_id: binned.user_id,
        categories: relevance.categories().to_vec(),
        timestamps: binned.bins.iter().map(|b| b.t_repr_seconds).collect(),
        values: binned
            .bins
            .iter()
            .map(|b| revealed_preference(b, relevance))
            .collect(),
    }
}

/// Which standard deviation the threshold window uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdFlavor {
    /// Divide squared deviations by the window length.
    #[default]
    Population,
    /// Divide by length - 1 (Bessel's correction).
    Sample,
}

impl std::fmt::Display for StdFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StdFlavor::Population => write!(f, "population"),
            StdFlavor::Sample => write!(f, "sample"),
        }
    }
}

impl std::str::FromStr for StdFlavor {
    type Err = BteError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(StdFlavor::Population),
            "sample" => Ok(StdFlavor::Sample),
            _ => Err(BteError::Config(format!(
                "unknown std flavor {s:?}; expected population or sample"
            ))),
        }
    }
}

/// Threshold bounds at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdBand {
    /// Per-category upper bounds x[t][i].
    pub upper: Vec<f64>,
    /// Per-category lower bounds y[t][i].
    pub lower: Vec<f64>,
    /// Unweighted cross-category mean of `upper`.
    pub avg_upper: f64,
    /// Unweighted cross-category mean of `lower`.
    pub avg_lower: f64,
}

/// Rolling thresholds aligned with a [`PreferenceSeries`]. `bands[t]` is
/// `None` during warm-up (t < horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSeries {
    /// Look-back nu; windows hold nu + 1 values.
    pub horizon: usize,
    /// Band half-width k in standard deviations.
    pub width: f64,
    pub flavor: StdFlavor,
    pub bands: Vec<Option<ThresholdBand>>,
}

impl ThresholdSeries {
    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Number of steps with defined thresholds. Zero means the series was
    /// too short for the horizon and callers should surface a warning.
    pub fn defined_count(&self) -> usize {
        self.bands.iter().filter(|b| b.is_some()).count()
    }

    pub fn band(&self, t: usize) -> Option<&ThresholdBand> {
        self.bands.get(t).and_then(|b| b.as_ref())
    }
}

/// Computes rolling thresholds over a preference series.
///
/// Requires `horizon >= 1` and `width > 0`. A series shorter than
/// `horizon + 1` produces a threshold series with no defined bands rather
/// than an error, so short users degrade gracefully.
pub fn rolling_thresholds(
    series: &PreferenceSeries,
    horizon: usize,
    width: f64,
    flavor: StdFlavor,
) -> Result<ThresholdSeries> {
    if horizon == 0 {
        return Err(BteError::Config(
            "threshold horizon (nu) must be >= 1".to_string(),
        ));
    }
    if width <= 0.0 || !width.is_finite() {
        return Err(BteError::Config(
            "threshold width (k) must be a positive finite number".to_string(),
        ));
    }
    let t_len = series.len();
    let n_cat = series.num_categories();
    let window_len = horizon + 1;
    let mut bands: Vec<Option<ThresholdBand>> = vec![None; t_len];
    for (t, slot) in bands.iter_mut().enumerate().skip(horizon) {
        let mut upper = Vec::with_capacity(n_cat);
        let mut lower = Vec::with_capacity(n_cat);
        for i in 0..n_cat {
            let mut sum = 0.0;
            for row in &series.values[t - horizon..=t] {
                sum += row[i];
            }
            let mean = sum / window_len as f64;
            let mut sq = 0.0;
            for row in &series.values[t - horizon..=t] {
                let d = row[i] - mean;
                sq += d * d;
            }
            let divisor = match flavor {
                StdFlavor::Population => window_len as f64,
                StdFlavor::Sample => (window_len - 1) as f64,
            };
            let std = (sq / divisor).sqrt();
            upper.push(mean + width * std);
            lower.push(mean - width * std);
        }
        let (avg_upper, avg_lower) = if n_cat == 0 {
            (0.0, 0.0)
        } else {
            (
                upper.iter().sum::<f64>() / n_cat as f64,
                lower.iter().sum::<f64>() / n_cat as f64,
            )
        };
        *slot = Some(ThresholdBand {
            upper,
            lower,
            avg_upper,
            avg_lower,
        });
    }
    Ok(ThresholdSeries {
        horizon,
        width,
        flavor,
        bands,
    })
}

/// Writes a series with its thresholds as CSV: one row per (step, category)
/// with columns `t,category,c,x,y,X_avg,Y_avg`. Warm-up rows leave the
/// threshold columns empty.
pub fn write_series_csv<W: std::io::Write>(
    w: W,
    series: &PreferenceSeries,
    thresholds: &ThresholdSeries,
    fmt: impl Fn(f64) -> String,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "category", "c", "x", "y", "X_avg", "Y_avg"])?;
    for t in 0..series.len() {
        for (i, label) in series.categories.iter().enumerate() {
            let (x, y, xa, ya) = match thresholds.band(t) {
                Some(b) => (
                    fmt(b.upper[i]),
                    fmt(b.lower[i]),
                    fmt(b.avg_upper),
                    fmt(b.avg_lower),
                ),
                None => (String::new(), String::new(), String::new(), String::new()),
            };
            wtr.write_record([
                t.to_string(),
                label.clone(),
                fmt(series.values[t][i]),
                x,
                y,
                xa,
                ya,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_series_csv`] back into a series and
/// threshold pair for rendering. Timestamps are not stored in the CSV, so
/// the reconstructed series uses step indices as representatives, and the
/// horizon is inferred as the first step with defined thresholds.
pub fn read_series_csv<R: std::io::Read>(
    reader: R,
    user_id: u64,
) -> Result<(PreferenceSeries, ThresholdSeries)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut categories: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut band_rows: Vec<Option<ThresholdBand>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line_no = idx + 2;
        let record = record?;
        if record.len() != 7 {
            return Err(BteError::Parse {
                line: line_no,
                msg: format!("expected 7 columns, got {}", record.len()),
            });
        }
        let t: usize = record[0].trim().parse().map_err(|_| BteError::Parse {
            line: line_no,
            msg: format!("bad step index {:?}", &record[0]),
        })?;
        let label = record[1].to_string();
        let parse_f = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| BteError::Parse {
                line: line_no,
                msg: format!("bad number {s:?}"),
            })
        };
        let c = parse_f(&record[2])?;
        if t == rows.len() {
            rows.push(Vec::new());
            band_rows.push(None);
        } else if t != rows.len() - 1 {
            return Err(BteError::Parse {
                line: line_no,
                msg: format!("non-contiguous step index {t}"),
            });
        }
        if rows.len() == 1 {
            categories.push(label.clone());
        } else if categories.get(rows[rows.len() - 1].len()) != Some(&label) {
            return Err(BteError::Parse {
                line: line_no,
                msg: format!("unexpected category {label:?} at step {t}"),
            });
        }
        let row = rows.last_mut().unwrap();
        row.push(c);
        if !record[3].trim().is_empty() {
            let x = parse_f(&record[3])?;
            let y = parse_f(&record[4])?;
            let xa = parse_f(&record[5])?;
            let ya = parse_f(&record[6])?;
            let band = band_rows
                .last_mut()
                .unwrap()
                .get_or_insert_with(|| ThresholdBand {
                    upper: Vec::new(),
                    lower: Vec::new(),
                    avg_upper: xa,
                    avg_lower: ya,
                });
            band.upper.push(x);
            band.lower.push(y);
        }
    }
    let horizon = band_rows
        .iter()
        .position(|b| b.is_some())
        .unwrap_or(band_rows.len());
    let series = PreferenceSeries {
        user_id,
        categories,
        timestamps: (0..rows.len() as u64).collect(),
        values: rows,
    };
    let thresholds = ThresholdSeries {
        horizon,
        width: 0.0,
        flavor: StdFlavor::Population,
        bands: band_rows,
    };
    Ok((series, thresholds))
}
