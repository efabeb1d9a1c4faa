//! Exit-window detection and barrier-to-exit scoring.
//!
//! An exit window for category i is a span `[t_x, t_y]` where the user first
//! rises strictly above the upper threshold (`c[t_x][i] > x[t_x]`), ends
//! strictly below the lower one (`c[t_y][i] < y[t_y]`), and stays strictly
//! inside the band at every step in between. Exact threshold touches neither
//! open nor close a window. The barrier-to-exit of a window is the inclusive
//! sum
//!
//! ```text
//! bte(window) = c[t_x][i] + c[t_x+1][i] + ... + c[t_y][i]
//! ```
//!
//! a discrete area under the preference curve: the engagement a user had to
//! wind down to leave the category. A category's score is the mean over its
//! windows and the system score is the unweighted mean over categories that
//! produced at least one window; categories without windows stay unscored
//! rather than contributing zero.
//!
//! Detection scans left to right, keeps windows maximal and non-overlapping,
//! and resumes after each close, so a fresh rise above the upper bound while
//! a candidate is open simply re-anchors the entry.

use serde::Deserialize;

use crate::preference::{PreferenceSeries, ThresholdSeries};

/// Which bounds gate the crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Compare category i against its own band x[t][i] / y[t][i].
    #[default]
    PerCategory,
    /// Compare every category against the cross-category means X[t] / Y[t].
    Averaged,
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdMode::PerCategory => write!(f, "per-category"),
            ThresholdMode::Averaged => write!(f, "averaged"),
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = crate::error::BteError;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "per-category" => Ok(ThresholdMode::PerCategory),
            "averaged" => Ok(ThresholdMode::Averaged),
            _ => Err(crate::error::BteError::Config(format!(
                "unknown threshold mode {s:?}; expected per-category or averaged"
            ))),
        }
    }
}

/// One detected exit window.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitWindow {
    /// Category index into the series' label list.
    pub category: usize,
    /// Entry step t_x (strictly above the upper bound).
    pub entry: usize,
    /// Exit step t_y (strictly below the lower bound).
    pub exit: usize,
    /// The inclusive span `c[entry ..= exit]` for this category.
    pub values: Vec<f64>,
    /// Mode the window was detected under.
    pub mode: ThresholdMode,
}

/// Scans a series for exit windows under the given mode. Returns one vector
/// per category, each sorted by entry step with pairwise-disjoint spans.
///
/// Thresholds must have been computed from this same series; a length
/// mismatch yields no windows. A series shorter than `horizon + 2` cannot
/// contain a window and comes back empty.
pub fn detect_exit_windows(
    series: &PreferenceSeries,
    thresholds: &ThresholdSeries,
    mode: ThresholdMode,
) -> Vec<Vec<ExitWindow>> {
    let t_len = series.len();
    let n_cat = series.num_categories();
    let mut out: Vec<Vec<ExitWindow>> = vec![Vec::new(); n_cat];
    if thresholds.len() != t_len {
        return out;
    }
    for (cat, windows) in out.iter_mut().enumerate() {
        let mut entry: Option<usize> = None;
        for t in thresholds.horizon..t_len {
            let Some(band) = thresholds.band(t) else {
                continue;
            };
            let (up, lo) = match mode {
                ThresholdMode::PerCategory => (band.upper[cat], band.lower[cat]),
                ThresholdMode::Averaged => (band.avg_upper, band.avg_lower),
            };
            let c = series.values[t][cat];
            match entry {
                None => {
                    if c > up {
                        entry = Some(t);
                    }
                }
                Some(t_x) => {
                    if c < lo {
                        windows.push(ExitWindow {
                            category: cat,
                            entry: t_x,
                            exit: t,
                            values: (t_x..=t).map(|tau| series.values[tau][cat]).collect(),
                            mode,
                        });
                        entry = None;
                    } else if c > up {
                        // A fresh crossing invalidates the older candidate.
                        entry = Some(t);
                    } else if c == up || c == lo {
                        entry = None;
                    }
                }
            }
        }
    }
    out
}

/// Inclusive sum of the series values across a window's span.
pub fn window_bte(series: &PreferenceSeries, window: &ExitWindow) -> f64 {
    let mut sum = 0.0;
    for t in window.entry..=window.exit {
        sum += series.values[t][window.category];
    }
    sum
}

/// Mean window score for one category; `None` when no window was observed.
pub fn category_bte(series: &PreferenceSeries, windows: &[ExitWindow]) -> Option<f64> {
    if windows.is_empty() {
        return None;
    }
    let sum: f64 = windows.iter().map(|w| window_bte(series, w)).sum();
    Some(sum / windows.len() as f64)
}

/// Unweighted mean over the defined category scores; `None` when no category
/// produced a window.
pub fn system_bte(category_scores: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = category_scores.iter().filter_map(|s| *s).collect();
    if defined.is_empty() {
        return None;
    }
    Some(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportSettings {
    pub binning: String,
    pub k: f64,
    pub mode: String,
    pub nu: usize,
}

/// One window in a report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WindowReport {
    pub bte: f64,
    pub t_x: usize,
    pub t_y: usize,
}

/// One category's rollup.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CategoryReport {
    /// Mean of the window scores; `None` marks "no exit observed".
    pub category_bte: Option<f64>,
    pub label: String,
    pub windows: Vec<WindowReport>,
}

impl CategoryReport {
    pub fn window_count(&self) -> usize {
        self.windows.len()
    }
}

/// Full barrier-to-exit result for one user.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BtEReport {
    pub categories: Vec<CategoryReport>,
    pub config: ReportSettings,
    pub system_bte: Option<f64>,
    pub user_id: u64,
}

/// Assembles the report for one user from detected windows. Categories keep
/// series order; the system score is recomputed from the category scores.
pub fn build_report(
    series: &PreferenceSeries,
    windows_per_category: &[Vec<ExitWindow>],
    config: ReportSettings,
) -> BtEReport {
    debug_assert_eq!(windows_per_category.len(), series.num_categories());
    let mut categories = Vec::with_capacity(series.num_categories());
    let mut scores = Vec::with_capacity(series.num_categories());
    for (i, label) in series.categories.iter().enumerate() {
        let windows = &windows_per_category[i];
        let score = category_bte(series, windows);
        scores.push(score);
        categories.push(CategoryReport {
            category_bte: score,
            label: label.clone(),
            windows: windows
                .iter()
                .map(|w| WindowReport {
                    bte: window_bte(series, w),
                    t_x: w.entry,
                    t_y: w.exit,
                })
                .collect(),
        });
    }
    BtEReport {
        categories,
        config,
        system_bte: system_bte(&scores),
        user_id: series.user_id,
    }
}
