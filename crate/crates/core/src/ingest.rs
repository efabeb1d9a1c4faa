//! Rating-log ingestion: event parsing, tag-relevance loading, and time binning.
//!
//! Input events are `(user, item, rating, timestamp)` tuples read either from
//! MovieLens-style `user::item::rating::timestamp` lines or from CSV with a
//! `userId,movieId,rating,timestamp` header. Tag relevance arrives as CSV with
//! a `movieId,tag,relevance` header and becomes a sparse item-by-category
//! matrix; pairs absent from the file read back as relevance 0.
//!
//! Binning turns one user's event stream into an ordered list of non-empty
//! bins. Three policies are supported: fixed wall-clock duration anchored at
//! the user's first event, fixed event count, and session splitting on
//! inactivity gaps. Empty bins are never materialized, so downstream series
//! are defined only at steps where feedback exists.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{BteError, Result};

/// Inclusive bounds a rating must fall in to be accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub lo: f64,
    pub hi: f64,
}

impl RatingScale {
    /// Half-star scale used by later MovieLens exports; the default.
    pub const HALF_STAR: RatingScale = RatingScale { lo: 0.5, hi: 5.0 };
    /// Whole-star 1..5 scale of the classic 1M export.
    pub const ML_1M: RatingScale = RatingScale { lo: 1.0, hi: 5.0 };

    pub fn contains(&self, rating: f64) -> bool {
        rating >= self.lo && rating <= self.hi
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self::HALF_STAR
    }
}

impl std::fmt::Display for RatingScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if *self == Self::HALF_STAR {
            write!(f, "half-star")
        } else if *self == Self::ML_1M {
            write!(f, "ml1m")
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

impl std::str::FromStr for RatingScale {
    type Err = BteError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-star" => Ok(Self::HALF_STAR),
            "ml1m" | "ml-1m" => Ok(Self::ML_1M),
            _ => Err(BteError::Config(format!(
                "unknown rating scale {s:?}; expected half-star or ml1m"
            ))),
        }
    }
}

/// One accepted rating event. Timestamps are seconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingEvent {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    pub timestamp: u64,
}

/// On-disk layout of a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `user::item::rating::timestamp`, no header.
    DoubleColon,
    /// CSV with a `userId,movieId,rating,timestamp` header row.
    Csv,
}

impl std::fmt::Display for RatingsFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatingsFormat::DoubleColon => write!(f, "double-colon"),
            RatingsFormat::Csv => write!(f, "csv"),
        }
    }
}

impl std::str::FromStr for RatingsFormat {
    type Err = BteError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double-colon" | "dat" => Ok(RatingsFormat::DoubleColon),
            "csv" => Ok(RatingsFormat::Csv),
            _ => Err(BteError::Config(format!(
                "unknown ratings format {s:?}; expected double-colon or csv"
            ))),
        }
    }
}

/// How to treat records that fail validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Skip bad records, keep counts and capped per-record notes.
    #[default]
    Lenient,
    /// Fail on the first bad record.
    Strict,
}

/// Maximum number of per-record notes kept in a [`ParseSummary`]; beyond
/// this only the counters grow.
const MAX_WARNINGS: usize = 20;

/// Outcome counters for one parse pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseSummary {
    /// Data lines seen (header rows excluded).
    pub lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub warnings: Vec<String>,
}

impl ParseSummary {
    fn note(&mut self, msg: String) {
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(msg);
        } else if self.warnings.len() == MAX_WARNINGS {
            self.warnings
                .push("further warnings suppressed".to_string());
        }
    }
}

fn bad_record(
    line: usize,
    msg: String,
    strictness: Strictness,
    summary: &mut ParseSummary,
) -> Result<()> {
    match strictness {
        Strictness::Strict => Err(BteError::Parse { line, msg }),
        Strictness::Lenient => {
            summary.rejected += 1;
            summary.note(format!("line {line}: {msg}"));
            Ok(())
        }
    }
}

fn parse_event_fields(
    fields: [&str; 4],
    line: usize,
    scale: RatingScale,
) -> std::result::Result<RatingEvent, String> {
    let user_id: u64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad user id {:?}", fields[0]))?;
    let item_id: u64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| format!("bad item id {:?}", fields[1]))?;
    let rating: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad rating {:?}", fields[2]))?;
    if !rating.is_finite() || !scale.contains(rating) {
        return Err(format!(
            "rating {rating} outside scale [{}, {}]",
            scale.lo, scale.hi
        ));
    }
    let timestamp: u64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[3]))?;
    let _ = line;
    Ok(RatingEvent {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

/// Parses a ratings stream. Returns accepted events in file order plus a
/// summary whose `accepted + rejected` equals the number of data lines.
pub fn parse_ratings<R: BufRead>(
    reader: R,
    format: RatingsFormat,
    scale: RatingScale,
    strictness: Strictness,
) -> Result<(Vec<RatingEvent>, ParseSummary)> {
    match format {
        RatingsFormat::DoubleColon => parse_ratings_double_colon(reader, scale, strictness),
        RatingsFormat::Csv => parse_ratings_csv(reader, scale, strictness),
    }
}

fn parse_ratings_double_colon<R: BufRead>(
    reader: R,
    scale: RatingScale,
    strictness: Strictness,
) -> Result<(Vec<RatingEvent>, ParseSummary)> {
    let mut events = Vec::new();
    let mut summary = ParseSummary::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        summary.lines += 1;
        let mut parts = line.split("::");
        let fields = [
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        ];
        if fields[3].is_empty() || parts.next().is_some() {
            bad_record(
                line_no,
                format!("expected 4 ::-separated fields, got {:?}", line),
                strictness,
                &mut summary,
            )?;
            continue;
        }
        match parse_event_fields(fields, line_no, scale) {
            Ok(ev) => {
                events.push(ev);
                summary.accepted += 1;
            }
            Err(msg) => bad_record(line_no, msg, strictness, &mut summary)?,
        }
    }
    Ok((events, summary))
}

fn parse_ratings_csv<R: Read>(
    reader: R,
    scale: RatingScale,
    strictness: Strictness,
) -> Result<(Vec<RatingEvent>, ParseSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    let mut summary = ParseSummary::default();
    for (idx, record) in rdr.records().enumerate() {
        // Line 1 is the header, so data records start at line 2.
        let line_no = idx + 2;
        summary.lines += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad_record(
                    line_no,
                    format!("unreadable row: {e}"),
                    strictness,
                    &mut summary,
                )?;
                continue;
            }
        };
        if record.len() != 4 {
            bad_record(
                line_no,
                format!("expected 4 columns, got {}", record.len()),
                strictness,
                &mut summary,
            )?;
            continue;
        }
        let fields = [&record[0], &record[1], &record[2], &record[3]];
        match parse_event_fields(fields, line_no, scale) {
            Ok(ev) => {
                events.push(ev);
                summary.accepted += 1;
            }
            Err(msg) => bad_record(line_no, msg, strictness, &mut summary)?,
        }
    }
    Ok((events, summary))
}

/// Writes events in `user::item::rating::timestamp` form; the inverse of
/// [`parse_ratings`] with [`RatingsFormat::DoubleColon`].
pub fn write_ratings_dat<W: Write>(mut w: W, events: &[RatingEvent]) -> Result<()> {
    for ev in events {
        writeln!(
            w,
            "{}::{}::{}::{}",
            ev.user_id, ev.item_id, ev.rating, ev.timestamp
        )?;
    }
    Ok(())
}

/// Sparse item-by-category relevance in `[0, 1]`, keyed by category label.
///
/// Category order is the order of first appearance, and it fixes the column
/// order of every downstream series and report. Lookups of pairs absent from
/// the source data return 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagRelevanceMatrix {
    categories: Vec<String>,
    label_index: HashMap<String, usize>,
    // Per item: (category index, relevance), sorted by category index.
    by_item: BTreeMap<u64, Vec<(usize, f64)>>,
}

impl TagRelevanceMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an empty matrix with a fixed category order.
    pub fn with_categories<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut m = Self::new();
        for label in labels {
            let label = label.into();
            if m.label_index.contains_key(&label) {
                return Err(BteError::Data(format!(
                    "duplicate category label {label:?}"
                )));
            }
            m.register(&label);
        }
        Ok(m)
    }

    fn register(&mut self, label: &str) -> usize {
        if let Some(&i) = self.label_index.get(label) {
            return i;
        }
        let i = self.categories.len();
        self.categories.push(label.to_string());
        self.label_index.insert(label.to_string(), i);
        i
    }

    /// Inserts a relevance value, registering the label if new. Returns true
    /// when an existing (item, category) value was overwritten.
    pub fn insert(&mut self, item_id: u64, label: &str, relevance: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&relevance));
        let cat = self.register(label);
        self.insert_by_index(item_id, cat, relevance)
    }

    pub(crate) fn insert_by_index(&mut self, item_id: u64, cat: usize, relevance: f64) -> bool {
        debug_assert!(cat < self.categories.len());
        let row = self.by_item.entry(item_id).or_default();
        match row.binary_search_by_key(&cat, |&(c, _)| c) {
            Ok(pos) => {
                row[pos].1 = relevance;
                true
            }
            Err(pos) => {
                row.insert(pos, (cat, relevance));
                false
            }
        }
    }

    /// Ordered category labels; indices elsewhere refer to this slice.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    /// Relevance of an (item, category) pair; 0 when unlisted.
    pub fn relevance(&self, item_id: u64, cat: usize) -> f64 {
        self.by_item
            .get(&item_id)
            .and_then(|row| {
                row.binary_search_by_key(&cat, |&(c, _)| c)
                    .ok()
                    .map(|p| row[p].1)
            })
            .unwrap_or(0.0)
    }

    /// Nonzero-relevance columns of one item, sorted by category index.
    pub fn item_relevances(&self, item_id: u64) -> &[(usize, f64)] {
        self.by_item.get(&item_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Item ids that carry at least one relevance entry, ascending.
    pub fn items(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_item.keys().copied()
    }

    /// Restricts the matrix to the given labels, which also become the new
    /// category order. Unknown labels are an error.
    pub fn subset(&self, labels: &[String]) -> Result<Self> {
        let mut out = Self::with_categories(labels.iter().cloned())?;
        let mut old_to_new = vec![None; self.categories.len()];
        for (new, label) in labels.iter().enumerate() {
            match self.label_index.get(label) {
                Some(&old) => old_to_new[old] = Some(new),
                None => return Err(BteError::Data(format!("unknown category label {label:?}"))),
            }
        }
        for (&item, row) in &self.by_item {
            for &(old, rel) in row {
                if let Some(new) = old_to_new[old] {
                    out.insert_by_index(item, new, rel);
                }
            }
        }
        Ok(out)
    }
}

/// Parses `movieId,tag,relevance` CSV. Out-of-range relevance is clamped to
/// `[0, 1]` when lenient and fatal when strict; a duplicated (item, tag) pair
/// keeps the last value seen and leaves a warning.
pub fn parse_tag_relevance<R: Read>(
    reader: R,
    strictness: Strictness,
) -> Result<(TagRelevanceMatrix, ParseSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut matrix = TagRelevanceMatrix::new();
    let mut summary = ParseSummary::default();
    for (idx, record) in rdr.records().enumerate() {
        let line_no = idx + 2;
        summary.lines += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad_record(
                    line_no,
                    format!("unreadable row: {e}"),
                    strictness,
                    &mut summary,
                )?;
                continue;
            }
        };
        if record.len() != 3 {
            bad_record(
                line_no,
                format!("expected 3 columns, got {}", record.len()),
                strictness,
                &mut summary,
            )?;
            continue;
        }
        let item_id: u64 = match record[0].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                bad_record(
                    line_no,
                    format!("bad item id {:?}", &record[0]),
                    strictness,
                    &mut summary,
                )?;
                continue;
            }
        };
        let label = record[1].trim();
        if label.is_empty() {
            bad_record(
                line_no,
                "empty tag label".to_string(),
                strictness,
                &mut summary,
            )?;
            continue;
        }
        let mut relevance: f64 = match record[2].trim().parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => {
                bad_record(
                    line_no,
                    format!("bad relevance {:?}", &record[2]),
                    strictness,
                    &mut summary,
                )?;
                continue;
            }
        };
        if !(0.0..=1.0).contains(&relevance) {
            match strictness {
                Strictness::Strict => {
                    return Err(BteError::Parse {
                        line: line_no,
                        msg: format!("relevance {relevance} outside [0, 1]"),
                    })
                }
                Strictness::Lenient => {
                    let clamped = relevance.clamp(0.0, 1.0);
                    summary.note(format!(
                        "line {line_no}: relevance {relevance} clamped to {clamped}"
                    ));
                    relevance = clamped;
                }
            }
        }
        if matrix.insert(item_id, label, relevance) {
            summary.note(format!(
                "line {line_no}: duplicate pair ({item_id}, {label:?}), last value kept"
            ));
        }
        summary.accepted += 1;
    }
    Ok((matrix, summary))
}

/// Writes a matrix back to `movieId,tag,relevance` CSV. Rows are grouped by
/// category in matrix order, so re-parsing preserves the category order, and
/// values keep full precision for an exact round trip.
pub fn write_relevance_csv<W: Write>(w: W, matrix: &TagRelevanceMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["movieId", "tag", "relevance"])?;
    let items: Vec<u64> = matrix.items().collect();
    for (cat, label) in matrix.categories().iter().enumerate() {
        for &item in &items {
            let row = matrix.item_relevances(item);
            if let Ok(pos) = row.binary_search_by_key(&cat, |&(c, _)| c) {
                wtr.write_record([item.to_string(), label.clone(), row[pos].1.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// How a user's event stream is cut into time bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinningPolicy {
    /// Windows of `seconds` anchored at the user's first event.
    FixedDuration { seconds: u64 },
    /// Consecutive chunks of `events` ratings (the last may be shorter).
    FixedCount { events: usize },
    /// A new bin starts when the gap since the previous event exceeds
    /// `seconds`; a gap equal to it stays in the same session.
    SessionGap { seconds: u64 },
}

pub const WEEK_SECONDS: u64 = 7 * 24 * 60 * 60;

impl BinningPolicy {
    /// The default: fixed seven-day windows.
    pub const WEEKLY: BinningPolicy = BinningPolicy::FixedDuration {
        seconds: WEEK_SECONDS,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BinningPolicy::FixedDuration { seconds } => seconds > 0,
            BinningPolicy::FixedCount { events } => events > 0,
            BinningPolicy::SessionGap { seconds } => seconds > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(BteError::Config(
                "binning parameter must be positive".to_string(),
            ))
        }
    }
}

impl std::fmt::Display for BinningPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            BinningPolicy::FixedDuration { seconds } if seconds == WEEK_SECONDS => {
                write!(f, "weekly")
            }
            BinningPolicy::FixedDuration { seconds } => write!(f, "duration:{seconds}"),
            BinningPolicy::FixedCount { events } => write!(f, "count:{events}"),
            BinningPolicy::SessionGap { seconds } => write!(f, "gap:{seconds}"),
        }
    }
}

impl std::str::FromStr for BinningPolicy {
    type Err = BteError;

    fn from_str(s: &str) -> Result<Self> {
        let policy = if s == "weekly" {
            BinningPolicy::WEEKLY
        } else if let Some(v) = s.strip_prefix("duration:") {
            BinningPolicy::FixedDuration {
                seconds: v
                    .parse()
                    .map_err(|_| BteError::Config(format!("bad duration in --bin {s:?}")))?,
            }
        } else if let Some(v) = s.strip_prefix("count:") {
            BinningPolicy::FixedCount {
                events: v
                    .parse()
                    .map_err(|_| BteError::Config(format!("bad count in --bin {s:?}")))?,
            }
        } else if let Some(v) = s.strip_prefix("gap:") {
            BinningPolicy::SessionGap {
                seconds: v
                    .parse()
                    .map_err(|_| BteError::Config(format!("bad gap in --bin {s:?}")))?,
            }
        } else {
            return Err(BteError::Config(format!(
                "unknown binning policy {s:?}; expected weekly, duration:S, count:N, or gap:S"
            )));
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// One non-empty time bin of a user's history. `ratings` keeps event order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingBin {
    /// Dense step index, 0-based and contiguous within a user.
    pub t_index: usize,
    /// Representative wall-clock second for the bin, strictly increasing
    /// across a user's bins.
    pub t_repr_seconds: u64,
    /// `(item_id, rating)` pairs in time order.
    pub ratings: Vec<(u64, f64)>,
}

/// A user's full binned history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBinnedRatings {
    pub user_id: u64,
    pub bins: Vec<RatingBin>,
}

/// Bins events per user. Users come back sorted by id, events are ordered by
/// timestamp within each user (ties keep input order), and every bin is
/// non-empty with deduplicated, strictly increasing representatives.
pub fn bin_events(events: &[RatingEvent], policy: BinningPolicy) -> Result<Vec<TimeBinnedRatings>> {
    policy.validate()?;
    let mut by_user: BTreeMap<u64, Vec<&RatingEvent>> = BTreeMap::new();
    for ev in events {
        by_user.entry(ev.user_id).or_default().push(ev);
    }
    let mut out = Vec::with_capacity(by_user.len());
    for (user_id, mut evs) in by_user {
        evs.sort_by_key(|e| e.timestamp);
        let groups = split_into_bins(&evs, policy);
        let mut bins = Vec::with_capacity(groups.len());
        let mut last_repr: Option<u64> = None;
        for group in groups {
            debug_assert!(!group.is_empty());
            let mut repr = group[0].timestamp;
            // Fixed-count chunks can start on tied timestamps; nudge to keep
            // representatives strictly increasing.
            if let Some(prev) = last_repr {
                if repr <= prev {
                    repr = prev + 1;
                }
            }
            last_repr = Some(repr);
            bins.push(RatingBin {
                t_index: bins.len(),
                t_repr_seconds: repr,
                ratings: group.iter().map(|e| (e.item_id, e.rating)).collect(),
            });
        }
        out.push(TimeBinnedRatings { user_id, bins });
    }
    Ok(out)
}

fn split_into_bins<'a>(
    evs: &[&'a RatingEvent],
    policy: BinningPolicy,
) -> Vec<Vec<&'a RatingEvent>> {
    let mut groups: Vec<Vec<&RatingEvent>> = Vec::new();
    match policy {
        BinningPolicy::FixedDuration { seconds } => {
            let mut current_idx = None;
            for &ev in evs {
                let idx = (ev.timestamp - evs[0].timestamp) / seconds;
                if current_idx != Some(idx) {
                    groups.push(Vec::new());
                    current_idx = Some(idx);
                }
                groups.last_mut().unwrap().push(ev);
            }
        }
        BinningPolicy::FixedCount { events } => {
            for chunk in evs.chunks(events) {
                groups.push(chunk.to_vec());
            }
        }
        BinningPolicy::SessionGap { seconds } => {
            let mut prev: Option<u64> = None;
            for &ev in evs {
                let new_session = match prev {
                    Some(p) => ev.timestamp - p > seconds,
                    None => true,
                };
                if new_session {
                    groups.push(Vec::new());
                }
                groups.last_mut().unwrap().push(ev);
                prev = Some(ev.timestamp);
            }
        }
    }
    groups
}

/// Writes binned histories as JSON Lines, one user document per line.
pub fn write_binned_jsonl<W: Write>(mut w: W, users: &[TimeBinnedRatings]) -> Result<()> {
    for user in users {
        serde_json::to_writer(&mut w, user)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the JSON Lines form written by [`write_binned_jsonl`].
pub fn read_binned_jsonl<R: BufRead>(reader: R) -> Result<Vec<TimeBinnedRatings>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
