//! Closed-loop user/recommender simulator with scripted preference shifts.
//!
//! One synthetic user interacts with a score-based recommender for a fixed
//! number of steps. Each step serves a slate, collects noisy ratings driven
//! by the user's hidden interest vector, updates the model toward the
//! observed ratings, and drifts the interest toward what was served:
//!
//! ```text
//! rating    r = 0.5 + 4.5 * dot(relevance(item), interest) + noise
//! model     score' = (1 - lr) * score + lr * (r - 0.5) / 4.5
//! drift     interest' = normalize((1 - gamma) * interest
//!                                 + gamma * normalize(exposure))
//! ```
//!
//! where exposure is the same relevance-weighted rating mass the analytics
//! side computes per bin. Scripted shifts overwrite chosen interest weights
//! right before renormalization, giving traces with exactly known change
//! points to grade the exit-window detector against.
//!
//! Everything is driven by `ChaCha8` streams split per purpose, so a config
//! and seed pin the whole trace byte for byte.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BteError, Result};
use crate::ingest::{RatingBin, TagRelevanceMatrix, TimeBinnedRatings};
use crate::preference::category_exposure;

/// Bounds of the simulated rating scale.
pub const RATING_LO: f64 = 0.5;
pub const RATING_HI: f64 = 5.0;

const RATING_SPAN: f64 = RATING_HI - RATING_LO;

// Distinct fixed salts keep the relevance, initialization, and loop streams
// independent of each other while still derived from one seed.
const RELEVANCE_SALT: u64 = 0x52454c4556414e43;
const INIT_SALT: u64 = 0x494e495453414c54;
const LOOP_SALT: u64 = 0x4c4f4f5053414c54;

/// Scripted overwrite of one interest weight at one step. The new weight is
/// installed during the drift of `step`, so it shapes the interest vector
/// used from `step + 1` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub step: usize,
    pub category: usize,
    pub weight: f64,
}

/// How item/category relevance is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceMode {
    /// Independent sparse draws per (item, category) pair.
    #[default]
    Random,
    /// Item a belongs fully to category `a % categories` and nothing else.
    SingleCategory,
}

/// How the recommender's scores start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelInit {
    /// Every item starts at the neutral midpoint 0.5.
    #[default]
    Cold,
    /// Every item starts at its true appeal under the initial interest.
    Warm,
}

/// How the user's initial interest vector is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuInit {
    /// Normalized uniform draws.
    #[default]
    Random,
    /// Equal weight on every category.
    Uniform,
}

macro_rules! keyword_enum {
    ($ty:ty { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                match self {
                    $(x if *x == $variant => write!(f, $text),)+
                    _ => unreachable!(),
                }
            }
        }

        impl std::str::FromStr for $ty {
            type Err = BteError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(BteError::Config(format!(
                        "unknown value {s:?} for {}; expected one of: {}",
                        stringify!($ty),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(RelevanceMode {
    "random" => RelevanceMode::Random,
    "single-category" => RelevanceMode::SingleCategory,
});
keyword_enum!(ModelInit {
    "cold" => ModelInit::Cold,
    "warm" => ModelInit::Warm,
});
keyword_enum!(MuInit {
    "random" => MuInit::Random,
    "uniform" => MuInit::Uniform,
});

/// Full parameter set of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Catalog size.
    pub items: usize,
    /// Slate size served each step.
    pub items_per_step: usize,
    /// Number of interest categories.
    pub categories: usize,
    /// Steps to simulate.
    pub horizon: usize,
    /// Drift rate gamma in [0, 1]; 0 freezes the interest vector.
    pub drift: f64,
    /// Exploration rate epsilon in [0, 1]; 0 is pure greedy.
    pub exploration: f64,
    /// Half-width of the uniform rating noise, in rating units.
    pub noise: f64,
    /// Model step size in [0, 1]; 1 jumps straight to the observed target.
    pub learning_rate: f64,
    pub relevance_mode: RelevanceMode,
    /// Probability that a random (item, category) pair stays empty.
    pub relevance_sparsity: f64,
    /// Kept relevance values are `u^exponent` for uniform u; larger
    /// exponents favor a few strong tags over many weak ones.
    pub relevance_exponent: f64,
    /// Separate seed for the relevance table; defaults off the main seed.
    pub relevance_seed: Option<u64>,
    pub model_init: ModelInit,
    pub mu_init: MuInit,
    /// Category whose initial weight gets boosted, if any.
    pub favorite_category: Option<usize>,
    /// Additive pre-normalization boost for the favorite category.
    pub favorite_boost: f64,
    pub shifts: Vec<ShiftEvent>,
    pub seed: u64,
    /// User id stamped on the trace and derived rating log.
    pub user_id: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            items: 200,
            items_per_step: 10,
            categories: 8,
            horizon: 100,
            drift: 0.1,
            exploration: 0.1,
            noise: 0.25,
            learning_rate: 0.1,
            relevance_mode: RelevanceMode::Random,
            relevance_sparsity: 0.5,
            relevance_exponent: 1.0,
            relevance_seed: None,
            model_init: ModelInit::Cold,
            mu_init: MuInit::Random,
            favorite_category: None,
            favorite_boost: 3.0,
            shifts: Vec::new(),
            seed: 17,
            user_id: 1,
        }
    }
}

impl SimConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.items == 0 {
            problems.push("items must be at least 1".to_string());
        }
        if self.items_per_step == 0 || self.items_per_step > self.items {
            problems.push(format!(
                "items_per_step must be in 1..={} (got {})",
                self.items, self.items_per_step
            ));
        }
        if self.categories == 0 {
            problems.push("categories must be at least 1".to_string());
        }
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".to_string());
        }
        for (name, value) in [
            ("drift", self.drift),
            ("exploration", self.exploration),
            ("learning_rate", self.learning_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                problems.push(format!("{name} must be in [0, 1] (got {value})"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            problems.push(format!(
                "noise must be finite and >= 0 (got {})",
                self.noise
            ));
        }
        if !(0.0..1.0).contains(&self.relevance_sparsity) {
            problems.push(format!(
                "relevance_sparsity must be in [0, 1) (got {})",
                self.relevance_sparsity
            ));
        }
        if !(self.relevance_exponent > 0.0 && self.relevance_exponent.is_finite()) {
            problems.push(format!(
                "relevance_exponent must be finite and > 0 (got {})",
                self.relevance_exponent
            ));
        }
        if let Some(cat) = self.favorite_category {
            if cat >= self.categories {
                problems.push(format!(
                    "favorite_category {cat} is out of range for {} categories",
                    self.categories
                ));
            }
        }
        if !(self.favorite_boost >= 0.0 && self.favorite_boost.is_finite()) {
            problems.push(format!(
                "favorite_boost must be finite and >= 0 (got {})",
                self.favorite_boost
            ));
        }
        for (n, shift) in self.shifts.iter().enumerate() {
            if shift.category >= self.categories {
                problems.push(format!(
                    "shift {n}: category {} is out of range for {} categories",
                    shift.category, self.categories
                ));
            }
            if shift.step >= self.horizon {
                problems.push(format!(
                    "shift {n}: step {} never fires within horizon {}",
                    shift.step, self.horizon
                ));
            }
            if !(0.0..=1.0).contains(&shift.weight) {
                problems.push(format!(
                    "shift {n}: weight must be in [0, 1] (got {})",
                    shift.weight
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BteError::Config(problems.join("; ")))
        }
    }
}

/// Parses a `key=value` config file into a [`SimConfig`]. Unknown keys,
/// malformed values, and out-of-range fields are all reported together.
/// Blank lines and `#` comments are skipped; omitted keys keep defaults.
pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut problems = Vec::new();

    fn set<T: std::str::FromStr>(slot: &mut T, key: &str, value: &str, problems: &mut Vec<String>) {
        match value.parse::<T>() {
            Ok(v) => *slot = v,
            Err(_) => problems.push(format!("{key}: cannot parse {value:?}")),
        }
    }

    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected key=value, got {line:?}", n + 1));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "items" => set(&mut cfg.items, key, value, &mut problems),
            "items_per_step" => set(&mut cfg.items_per_step, key, value, &mut problems),
            "categories" => set(&mut cfg.categories, key, value, &mut problems),
            "horizon" => set(&mut cfg.horizon, key, value, &mut problems),
            "drift" => set(&mut cfg.drift, key, value, &mut problems),
            "exploration" => set(&mut cfg.exploration, key, value, &mut problems),
            "noise" => set(&mut cfg.noise, key, value, &mut problems),
            "learning_rate" => set(&mut cfg.learning_rate, key, value, &mut problems),
            "relevance_mode" => set(&mut cfg.relevance_mode, key, value, &mut problems),
            "relevance_sparsity" => set(&mut cfg.relevance_sparsity, key, value, &mut problems),
            "relevance_exponent" => set(&mut cfg.relevance_exponent, key, value, &mut problems),
            "relevance_seed" => {
                let mut seed = 0u64;
                set(&mut seed, key, value, &mut problems);
                cfg.relevance_seed = Some(seed);
            }
            "model_init" => set(&mut cfg.model_init, key, value, &mut problems),
            "mu_init" => set(&mut cfg.mu_init, key, value, &mut problems),
            "favorite_category" => {
                let mut cat = 0usize;
                set(&mut cat, key, value, &mut problems);
                cfg.favorite_category = Some(cat);
            }
            "favorite_boost" => set(&mut cfg.favorite_boost, key, value, &mut problems),
            "seed" => set(&mut cfg.seed, key, value, &mut problems),
            "user_id" => set(&mut cfg.user_id, key, value, &mut problems),
            "shifts" => match parse_shifts(value) {
                Ok(shifts) => cfg.shifts = shifts,
                Err(msg) => problems.push(format!("shifts: {msg}")),
            },
            _ => problems.push(format!("unknown key {key:?}")),
        }
    }

    if !problems.is_empty() {
        return Err(BteError::Config(problems.join("; ")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `step:category:weight[,step:category:weight...]`.
fn parse_shifts(value: &str) -> std::result::Result<Vec<ShiftEvent>, String> {
    let mut shifts = Vec::new();
    for part in value.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 3 {
            return Err(format!("expected step:category:weight, got {part:?}"));
        }
        let step = fields[0]
            .parse()
            .map_err(|_| format!("bad step in {part:?}"))?;
        let category = fields[1]
            .parse()
            .map_err(|_| format!("bad category in {part:?}"))?;
        let weight = fields[2]
            .parse()
            .map_err(|_| format!("bad weight in {part:?}"))?;
        shifts.push(ShiftEvent {
            step,
            category,
            weight,
        });
    }
    Ok(shifts)
}

/// Draws the item/category relevance table for a run. Labels are
/// `cat0..catN` so downstream reports stay ordered and self-describing.
pub fn generate_relevance(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> TagRelevanceMatrix {
    let labels: Vec<String> = (0..cfg.categories).map(|i| format!("cat{i}")).collect();
    let mut matrix =
        TagRelevanceMatrix::with_categories(&labels).expect("generated labels are distinct");
    match cfg.relevance_mode {
        RelevanceMode::Random => {
            for item in 0..cfg.items as u64 {
                for cat in 0..cfg.categories {
                    if rng.gen::<f64>() >= cfg.relevance_sparsity {
                        let value = rng.gen::<f64>().powf(cfg.relevance_exponent);
                        matrix.insert_by_index(item, cat, value);
                    }
                }
            }
        }
        RelevanceMode::SingleCategory => {
            for item in 0..cfg.items as u64 {
                matrix.insert_by_index(item, item as usize % cfg.categories, 1.0);
            }
        }
    }
    matrix
}

fn normalize_or_uniform(mut weights: Vec<f64>) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        for w in &mut weights {
            *w /= sum;
        }
    } else {
        let n = weights.len().max(1);
        weights = vec![1.0 / n as f64; weights.len()];
    }
    weights
}

/// Draws the user's initial interest distribution.
pub fn initial_interest(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut weights = match cfg.mu_init {
        MuInit::Random => (0..cfg.categories).map(|_| rng.gen::<f64>()).collect(),
        MuInit::Uniform => vec![1.0; cfg.categories],
    };
    if let Some(cat) = cfg.favorite_category {
        weights[cat] += cfg.favorite_boost;
    }
    normalize_or_uniform(weights)
}

/// True appeal of an item under an interest vector, in [0, 1] for relevance
/// values in [0, 1].
fn appeal(item: u64, relevance: &TagRelevanceMatrix, interest: &[f64]) -> f64 {
    relevance
        .item_relevances(item)
        .iter()
        .map(|&(cat, rel)| rel * interest[cat])
        .sum()
}

fn initial_model(cfg: &SimConfig, relevance: &TagRelevanceMatrix, interest: &[f64]) -> Vec<f64> {
    match cfg.model_init {
        ModelInit::Cold => vec![0.5; cfg.items],
        ModelInit::Warm => (0..cfg.items as u64)
            .map(|item| appeal(item, relevance, interest))
            .collect(),
    }
}

/// Fills a slate of `count` distinct items. Each slot explores with
/// probability `exploration` (uniform over the items not yet chosen) and is
/// greedy otherwise, breaking score ties toward the lowest item id. With
/// `exploration == 0` no randomness is consumed at all.
pub fn recommend(
    scores: &[f64],
    count: usize,
    exploration: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    debug_assert!(count <= scores.len());
    let mut chosen = vec![false; scores.len()];
    let mut slate = Vec::with_capacity(count);
    for slot in 0..count {
        let explore = exploration > 0.0 && rng.gen::<f64>() < exploration;
        let pick = if explore {
            let mut nth = rng.gen_range(0..scores.len() - slot);
            let mut pick = 0;
            for (item, taken) in chosen.iter().enumerate() {
                if *taken {
                    continue;
                }
                if nth == 0 {
                    pick = item;
                    break;
                }
                nth -= 1;
            }
            pick
        } else {
            let mut best: Option<usize> = None;
            for (item, taken) in chosen.iter().enumerate() {
                if *taken {
                    continue;
                }
                if best.is_none_or(|b| scores[item] > scores[b]) {
                    best = Some(item);
                }
            }
            best.expect("count <= scores.len() leaves an unchosen item")
        };
        chosen[pick] = true;
        slate.push(pick);
    }
    slate
}

/// The user's noisy rating for one served item. With zero noise no
/// randomness is consumed and the rating is exactly the scaled appeal.
pub fn user_feedback(
    item: u64,
    relevance: &TagRelevanceMatrix,
    interest: &[f64],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut rating = RATING_LO + RATING_SPAN * appeal(item, relevance, interest);
    if noise > 0.0 {
        rating += rng.gen_range(-noise..=noise);
    }
    rating.clamp(RATING_LO, RATING_HI)
}

/// Moves served items' scores toward the normalized observed ratings; items
/// off the slate keep their scores bit for bit.
pub fn update_model(scores: &mut [f64], slate: &[usize], ratings: &[f64], learning_rate: f64) {
    for (&item, &rating) in slate.iter().zip(ratings) {
        let target = (rating - RATING_LO) / RATING_SPAN;
        scores[item] = (1.0 - learning_rate) * scores[item] + learning_rate * target;
    }
}

/// One drift update of the interest vector. `fired` holds the
/// (category, weight) overwrites scheduled for this step. Without drift and
/// without shifts the vector is returned bit for bit unchanged; zero total
/// exposure leaves the interest in place as well.
pub fn drift_preference(
    interest: &[f64],
    exposure: &[f64],
    drift: f64,
    fired: &[(usize, f64)],
) -> Vec<f64> {
    if drift == 0.0 && fired.is_empty() {
        return interest.to_vec();
    }
    let exposure_sum: f64 = exposure.iter().sum();
    let mut next: Vec<f64> = if drift > 0.0 && exposure_sum > 0.0 {
        interest
            .iter()
            .zip(exposure)
            .map(|(&mu, &e)| (1.0 - drift) * mu + drift * e / exposure_sum)
            .collect()
    } else {
        interest.to_vec()
    };
    for &(category, weight) in fired {
        next[category] = weight;
    }
    normalize_or_uniform(next)
}

/// Shannon entropy (nats) of a nonnegative weight vector; zero weights are
/// skipped.
pub fn entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>()
}

/// Snapshot of one step, taken after the slate is rated and before the
/// model update and drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub step: usize,
    /// Hidden interest vector the ratings were drawn from.
    pub interest: Vec<f64>,
    /// Recommender scores the slate was picked from.
    pub model_scores: Vec<f64>,
    /// Served item ids, in slot order.
    pub recommendations: Vec<u64>,
    /// Ratings aligned with the slate.
    pub feedback: Vec<f64>,
}

/// Full record of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub user_id: u64,
    pub shifts: Vec<ShiftEvent>,
    pub states: Vec<SimState>,
}

impl SimTrace {
    /// Interest entropy per step, a direct diversity readout of the trace.
    pub fn diversity(&self) -> Vec<f64> {
        self.states.iter().map(|s| entropy(&s.interest)).collect()
    }
}

/// Runs the loop and returns the trace together with the relevance table it
/// was driven by. Identical configs produce identical results.
pub fn run_simulation(cfg: &SimConfig) -> Result<(SimTrace, TagRelevanceMatrix)> {
    cfg.validate()?;
    let relevance_seed = cfg.relevance_seed.unwrap_or(cfg.seed ^ RELEVANCE_SALT);
    let mut relevance_rng = ChaCha8Rng::seed_from_u64(relevance_seed);
    let relevance = generate_relevance(cfg, &mut relevance_rng);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SALT);
    let mut interest = initial_interest(cfg, &mut init_rng);
    let mut scores = initial_model(cfg, &relevance, &interest);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ LOOP_SALT);
    let mut states = Vec::with_capacity(cfg.horizon);
    for step in 0..cfg.horizon {
        let slate = recommend(&scores, cfg.items_per_step, cfg.exploration, &mut rng);
        let feedback: Vec<f64> = slate
            .iter()
            .map(|&item| user_feedback(item as u64, &relevance, &interest, cfg.noise, &mut rng))
            .collect();
        states.push(SimState {
            step,
            interest: interest.clone(),
            model_scores: scores.clone(),
            recommendations: slate.iter().map(|&i| i as u64).collect(),
            feedback: feedback.clone(),
        });

        update_model(&mut scores, &slate, &feedback, cfg.learning_rate);
        let pairs: Vec<(u64, f64)> = slate
            .iter()
            .map(|&i| i as u64)
            .zip(feedback.iter().copied())
            .collect();
        let exposure = category_exposure(&pairs, &relevance);
        let fired: Vec<(usize, f64)> = cfg
            .shifts
            .iter()
            .filter(|s| s.step == step)
            .map(|s| (s.category, s.weight))
            .collect();
        interest = drift_preference(&interest, &exposure, cfg.drift, &fired);
    }

    let trace = SimTrace {
        user_id: cfg.user_id,
        shifts: cfg.shifts.clone(),
        states,
    };
    Ok((trace, relevance))
}

/// Reshapes a trace into the analytics input format: one bin per step, the
/// slate's ratings as that bin's events.
pub fn trace_to_ratings(trace: &SimTrace) -> TimeBinnedRatings {
    TimeBinnedRatings {
        user_id: trace.user_id,
        bins: trace
            .states
            .iter()
            .map(|s| RatingBin {
                t_index: s.step,
                t_repr_seconds: s.step as u64,
                ratings: s
                    .recommendations
                    .iter()
                    .copied()
                    .zip(s.feedback.iter().copied())
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    shifts: Vec<ShiftEvent>,
    user_id: u64,
}

/// Writes a trace as JSON lines: a header with the run identity, then one
/// state per line.
pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &SimTrace) -> Result<()> {
    let header = TraceHeader {
        shifts: trace.shifts.clone(),
        user_id: trace.user_id,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for state in &trace.states {
        serde_json::to_writer(&mut w, state)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace_jsonl`].
pub fn read_trace_jsonl<R: BufRead>(reader: R) -> Result<SimTrace> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| BteError::Data("empty trace file".to_string()))??;
    let header: TraceHeader = serde_json::from_str(&header_line)?;
    let mut states = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        states.push(serde_json::from_str(&line)?);
    }
    Ok(SimTrace {
        user_id: header.user_id,
        shifts: header.shifts,
        states,
    })
}

/// Groups scripted shifts by step, for quick lookups when grading detector
/// output against ground truth.
pub fn shifts_by_step(shifts: &[ShiftEvent]) -> BTreeMap<usize, Vec<ShiftEvent>> {
    let mut map: BTreeMap<usize, Vec<ShiftEvent>> = BTreeMap::new();
    for &s in shifts {
        map.entry(s.step).or_default().push(s);
    }
    map
}
