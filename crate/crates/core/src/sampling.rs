//! Train/val/test splitting and sampler plans for the four training
//! configurations: baseline, balanced oversampling, stratified batching and
//! group-specific partitions.
//!
//! Every operation is a pure function of its input order and a `u64` seed;
//! randomness comes from [`crate::rng::PlanRng`] (ChaCha8). A plan is written
//! as JSON:
//!
//! ```json
//! {
//!   "schema_version": "1",
//!   "strategy": "StratifiedBatch",
//!   "seed": 42,
//!   "attribute": "Sex",
//!   "batch_size": 16,
//!   "batches": [["p001", "p017", "..."]],
//!   "group_label": null
//! }
//! ```
//!
//! `strategy` is one of `Baseline`, `Balanced`, `StratifiedBatch`,
//! `GroupSpecific`; `attribute` is `Sex`, `Race`, `SexByRace` or `null` for
//! baseline plans; `group_label` is set only on group-specific plans.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CohortTable;
use crate::model::{CohortRecord, GroupKey, GroupingAttribute, Split};
use crate::rng::PlanRng;

pub const PLAN_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("no training records")]
    EmptyInput,
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("batch size {batch_size} cannot hold one item from each of {groups} groups")]
    BatchTooSmall { batch_size: usize, groups: usize },
    #[error("strategy needs at least two groups, found {0}")]
    TooFewGroups(usize),
    #[error("stratum {stratum} has {size} records but {required} parts need at least one each")]
    StratumTooSmall {
        stratum: GroupKey,
        size: usize,
        required: usize,
    },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("unsupported plan schema_version {0:?}")]
    SchemaMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("plan check failed: {0}")]
    PlanViolation(String),
}

impl SamplingError {
    fn io(path: &Path, source: io::Error) -> Self {
        SamplingError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

const FRACTION_SCALE: u64 = 1_000_000;

/// Train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const DEFAULT: SplitFractions = SplitFractions {
        train: 0.70,
        val: 0.15,
        test: 0.15,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, SamplingError> {
        let f = Self { train, val, test };
        f.weights()?;
        Ok(f)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    /// Fractions as integer weights summing to `FRACTION_SCALE`, so that all
    /// apportionment arithmetic is exact.
    fn weights(&self) -> Result<[u64; 3], SamplingError> {
        let f = self.as_array();
        let sum: f64 = f.iter().sum();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(SamplingError::InvalidFractions(f));
        }
        let mut w = f.map(|x| (x * FRACTION_SCALE as f64).round() as u64);
        let total: u64 = w.iter().sum();
        // Rounding drift (e.g. thirds) goes to the largest part.
        let largest = (0..3).max_by_key(|&i| (w[i], i)).expect("three parts");
        w[largest] = w[largest] + FRACTION_SCALE - total;
        Ok(w)
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Largest-remainder apportionment of `n` items over `weights`. Equal
/// remainders favour the later part.
pub fn largest_remainder(n: usize, weights: [u64; 3]) -> [usize; 3] {
    let scale: u64 = weights.iter().sum();
    let mut sizes = [0usize; 3];
    let mut remainders = [0u128; 3];
    for i in 0..3 {
        let q = n as u128 * u128::from(weights[i]);
        sizes[i] = (q / u128::from(scale)) as usize;
        remainders[i] = q % u128::from(scale);
    }
    let leftover = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(b.cmp(&a)));
    for &i in order.iter().take(leftover) {
        sizes[i] += 1;
    }
    sizes
}

/// Part sizes for one stratum of the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub stratum: GroupKey,
    /// Train, val, test.
    pub sizes: [usize; 3],
}

impl StratumCounts {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    /// Ids in cohort order with their part.
    pub assignments: Vec<(String, Split)>,
    pub fractions: SplitFractions,
    pub seed: u64,
    pub strata: Vec<StratumCounts>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignments
            .iter()
            .find(|(i, _)| i == id)
            .map(|&(_, s)| s)
    }

    /// Train, val, test totals.
    pub fn totals(&self) -> [usize; 3] {
        let mut t = [0; 3];
        for (_, s) in &self.assignments {
            t[s.index()] += 1;
        }
        t
    }

    /// Copies the assignment onto the table's records.
    pub fn apply(&self, table: &mut CohortTable) {
        let map: HashMap<&str, Split> = self
            .assignments
            .iter()
            .map(|(id, s)| (id.as_str(), *s))
            .collect();
        for r in &mut table.records {
            r.split = map.get(r.id.as_str()).copied();
        }
    }

    /// `id,split` CSV text in cohort order.
    pub fn to_csv(&self) -> String {
        split_csv(&self.assignments)
    }
}

fn split_csv(rows: &[(String, Split)]) -> String {
    let mut s = String::from("id,split\n");
    for (id, split) in rows {
        s.push_str(id);
        s.push(',');
        s.push_str(split.as_str());
        s.push('\n');
    }
    s
}

pub fn write_split(path: impl AsRef<Path>, rows: &[(String, Split)]) -> Result<(), SamplingError> {
    let path = path.as_ref();
    fs::write(path, split_csv(rows)).map_err(|e| SamplingError::io(path, e))
}

/// Reads an `id,split` CSV.
pub fn read_split(path: impl AsRef<Path>) -> Result<Vec<(String, Split)>, SamplingError> {
    let path = path.as_ref();
    let parse_err = |message: String| SamplingError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| SamplingError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| parse_err("missing column \"id\"".into()))?;
    let split_col = headers
        .iter()
        .position(|h| h == "split")
        .ok_or_else(|| parse_err("missing column \"split\"".into()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let value = rec.get(split_col).unwrap_or("");
        let split = value
            .parse::<Split>()
            .map_err(|_| parse_err(format!("row {}: bad split {value:?}", i + 1)))?;
        rows.push((rec.get(id_col).unwrap_or("").to_string(), split));
    }
    Ok(rows)
}

/// Splits the cohort into train/val/test, stratified on the joint sex x race
/// cell.
///
/// Part totals are the largest-remainder apportionment of the whole cohort.
/// Each stratum receives the floor of its exact quota per part plus at most
/// one extra item per part; the extra items are placed stratum by stratum
/// into the parts with the largest outstanding need, which always meets the
/// global totals exactly. Records are then assigned from a seeded shuffle of
/// each stratum.
pub fn stratified_split(
    table: &CohortTable,
    seed: u64,
    fractions: SplitFractions,
) -> Result<SplitAssignment, SamplingError> {
    let weights = fractions.weights()?;
    let scale = FRACTION_SCALE as u128;
    let attribute = GroupingAttribute::SexByRace;
    let positive_parts = weights.iter().filter(|&&w| w > 0).count();

    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); attribute.levels().len()];
    for (i, r) in table.records.iter().enumerate() {
        strata[r.level_index(attribute)].push(i);
    }
    let level_key = |level: usize| GroupKey::new(attribute, attribute.levels()[level]).expect("canonical level");
    for (level, members) in strata.iter().enumerate() {
        if !members.is_empty() && members.len() < positive_parts {
            return Err(SamplingError::StratumTooSmall {
                stratum: level_key(level),
                size: members.len(),
                required: positive_parts,
            });
        }
    }

    let totals = largest_remainder(table.len(), weights);
    let mut sizes: Vec<[usize; 3]> = Vec::with_capacity(strata.len());
    let mut remainders: Vec<[u128; 3]> = Vec::with_capacity(strata.len());
    let mut need = totals;
    for members in &strata {
        let n = members.len() as u128;
        let mut floor = [0usize; 3];
        let mut rem = [0u128; 3];
        for i in 0..3 {
            let q = n * u128::from(weights[i]);
            floor[i] = (q / scale) as usize;
            rem[i] = q % scale;
            need[i] -= floor[i];
        }
        sizes.push(floor);
        remainders.push(rem);
    }
    for (s, members) in strata.iter().enumerate() {
        let extra = members.len() - sizes[s].iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            need[b]
                .cmp(&need[a])
                .then(remainders[s][b].cmp(&remainders[s][a]))
                .then(b.cmp(&a))
        });
        for &part in order.iter().take(extra) {
            assert!(need[part] > 0, "controlled rounding exhausted part {part}");
            sizes[s][part] += 1;
            need[part] -= 1;
        }
    }
    debug_assert_eq!(need, [0, 0, 0]);

    let mut rng = PlanRng::new(seed);
    let mut parts = vec![Split::Train; table.len()];
    let mut stratum_counts = Vec::new();
    for (s, members) in strata.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut shuffled = members.clone();
        rng.shuffle(&mut shuffled);
        let [n_train, n_val, _] = sizes[s];
        for (k, &idx) in shuffled.iter().enumerate() {
            parts[idx] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        stratum_counts.push(StratumCounts {
            stratum: level_key(s),
            sizes: sizes[s],
        });
    }

    Ok(SplitAssignment {
        assignments: table
            .records
            .iter()
            .zip(parts)
            .map(|(r, s)| (r.id.clone(), s))
            .collect(),
        fractions,
        seed,
        strata: stratum_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Baseline,
    Balanced,
    StratifiedBatch,
    GroupSpecific,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "balanced" => Ok(Strategy::Balanced),
            "stratified" => Ok(Strategy::StratifiedBatch),
            "group" => Ok(Strategy::GroupSpecific),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// A seeded batch schedule. See the module docs for the file layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub schema_version: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub attribute: Option<GroupingAttribute>,
    pub batch_size: usize,
    pub batches: Vec<Vec<String>>,
    #[serde(default)]
    pub group_label: Option<String>,
}

impl SamplerPlan {
    fn new(
        strategy: Strategy,
        seed: u64,
        attribute: Option<GroupingAttribute>,
        batch_size: usize,
        items: Vec<String>,
    ) -> Self {
        Self {
            schema_version: PLAN_SCHEMA_VERSION.into(),
            strategy,
            seed,
            attribute,
            batch_size,
            batches: items.chunks(batch_size).map(<[String]>::to_vec).collect(),
            group_label: None,
        }
    }

    /// Every id in schedule order.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.batches.iter().flatten().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SamplingError> {
        let parse = |message: String| SamplingError::Parse {
            path: PathBuf::new(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or("");
        if version != PLAN_SCHEMA_VERSION {
            return Err(SamplingError::SchemaMismatch(version.to_string()));
        }
        serde_json::from_value(value).map_err(|e| parse(e.to_string()))
    }
}

pub fn write_plan(plan: &SamplerPlan, path: impl AsRef<Path>) -> Result<(), SamplingError> {
    let path = path.as_ref();
    fs::write(path, plan.to_json()).map_err(|e| SamplingError::io(path, e))
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<SamplerPlan, SamplingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SamplingError::io(path, e))?;
    SamplerPlan::from_json(&text).map_err(|e| match e {
        SamplingError::Parse { message, .. } => SamplingError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

fn check_batch_size(batch_size: usize) -> Result<(), SamplingError> {
    if batch_size == 0 {
        Err(SamplingError::ZeroBatchSize)
    } else {
        Ok(())
    }
}

/// Groups record ids by level of `attribute`; only observed levels, in
/// canonical order, ids in input order.
fn group_ids(records: &[CohortRecord], attribute: GroupingAttribute) -> Vec<(GroupKey, Vec<String>)> {
    let mut buckets: Vec<Vec<String>> = vec![Vec::new(); attribute.levels().len()];
    for r in records {
        buckets[r.level_index(attribute)].push(r.id.clone());
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(level, ids)| {
            (
                GroupKey::new(attribute, attribute.levels()[level]).expect("canonical level"),
                ids,
            )
        })
        .collect()
}

/// One seeded shuffle of the training ids, cut into batches.
pub fn baseline_plan(train_ids: &[String], seed: u64, batch_size: usize) -> Result<SamplerPlan, SamplingError> {
    check_batch_size(batch_size)?;
    if train_ids.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    let mut ids = train_ids.to_vec();
    PlanRng::new(seed).shuffle(&mut ids);
    Ok(SamplerPlan::new(Strategy::Baseline, seed, None, batch_size, ids))
}

/// Pads every group up to the largest group by drawing uniformly with
/// replacement from that group, then shuffles the pooled multiset.
pub fn oversample_plan(
    train_records: &[CohortRecord],
    attribute: GroupingAttribute,
    seed: u64,
    batch_size: usize,
) -> Result<SamplerPlan, SamplingError> {
    check_batch_size(batch_size)?;
    if train_records.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    let groups = group_ids(train_records, attribute);
    if groups.len() < 2 {
        return Err(SamplingError::TooFewGroups(groups.len()));
    }
    let target = groups.iter().map(|(_, ids)| ids.len()).max().unwrap_or(0);
    let mut rng = PlanRng::new(seed);
    let mut pool = Vec::with_capacity(target * groups.len());
    for (_, ids) in &groups {
        pool.extend(ids.iter().cloned());
        for _ in ids.len()..target {
            pool.push(ids[rng.below(ids.len())].clone());
        }
    }
    rng.shuffle(&mut pool);
    Ok(SamplerPlan::new(
        Strategy::Balanced,
        seed,
        Some(attribute),
        batch_size,
        pool,
    ))
}

/// Builds batches with near-equal representation of every group.
///
/// Slots are dealt round-robin over groups in canonical order across the
/// whole schedule, so within any batch per-group counts differ by at most
/// one and the extra slots rotate from batch to batch. Each group supplies
/// exactly `max_group_size` draws: ids come from a seeded shuffle of the
/// group, reshuffled whenever a smaller group runs out. The largest group is
/// therefore seen exactly once and the schedule holds
/// `groups * max_group_size` items in `ceil(groups * max_group_size /
/// batch_size)` batches.
pub fn stratified_batch_plan(
    train_records: &[CohortRecord],
    attribute: GroupingAttribute,
    seed: u64,
    batch_size: usize,
) -> Result<SamplerPlan, SamplingError> {
    check_batch_size(batch_size)?;
    if train_records.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    let groups = group_ids(train_records, attribute);
    if batch_size < groups.len() {
        return Err(SamplingError::BatchTooSmall {
            batch_size,
            groups: groups.len(),
        });
    }
    let mut rng = PlanRng::new(seed);
    let mut decks: Vec<(Vec<String>, usize)> = groups
        .into_iter()
        .map(|(_, mut ids)| {
            rng.shuffle(&mut ids);
            (ids, 0)
        })
        .collect();
    let largest = decks.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
    let group_count = decks.len();
    let total = largest * group_count;
    let mut items = Vec::with_capacity(total);
    for slot in 0..total {
        let (deck, cursor) = &mut decks[slot % group_count];
        if *cursor == deck.len() {
            rng.shuffle(deck);
            *cursor = 0;
        }
        items.push(deck[*cursor].clone());
        *cursor += 1;
    }
    Ok(SamplerPlan::new(
        Strategy::StratifiedBatch,
        seed,
        Some(attribute),
        batch_size,
        items,
    ))
}

/// One baseline-style plan per group level, each restricted to that group.
pub fn group_partition(
    train_records: &[CohortRecord],
    attribute: GroupingAttribute,
    seed: u64,
    batch_size: usize,
) -> Result<Vec<(String, SamplerPlan)>, SamplingError> {
    check_batch_size(batch_size)?;
    if train_records.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    group_ids(train_records, attribute)
        .into_iter()
        .map(|(key, ids)| {
            let mut plan = baseline_plan(&ids, seed, batch_size)?;
            plan.strategy = Strategy::GroupSpecific;
            plan.attribute = Some(attribute);
            plan.group_label = Some(key.value.clone());
            Ok((key.value, plan))
        })
        .collect()
}

/// Occurrence counts of a plan, broken down by group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub strategy: Strategy,
    pub batches: usize,
    pub items: usize,
    pub distinct_ids: usize,
    /// Occurrences per group level in canonical order (observed levels only).
    pub group_counts: Vec<(String, usize)>,
}

/// Per-group occurrence counts for every batch of `plan`, indexed like
/// `attribute.levels()`.
pub fn batch_group_counts(
    plan: &SamplerPlan,
    records: &[CohortRecord],
    attribute: GroupingAttribute,
) -> Result<Vec<Vec<usize>>, SamplingError> {
    let level: HashMap<&str, usize> = records
        .iter()
        .map(|r| (r.id.as_str(), r.level_index(attribute)))
        .collect();
    plan.batches
        .iter()
        .map(|batch| {
            let mut counts = vec![0; attribute.levels().len()];
            for id in batch {
                let l = level.get(id.as_str()).ok_or_else(|| {
                    SamplingError::PlanViolation(format!("id {id:?} is not a training record"))
                })?;
                counts[*l] += 1;
            }
            Ok(counts)
        })
        .collect()
}

/// Checks a plan against the training records it was built from and returns
/// its summary. The checks depend on the strategy:
///
/// * all: ids are training records; all batches but the last are full.
/// * baseline: every training id appears exactly once.
/// * balanced: every group appears equally often and every id at least once.
/// * stratified: per-batch group counts differ by at most one and each id of
///   the largest group appears exactly once.
/// * group-specific: ids all belong to `group_label` and each appears once.
pub fn verify_plan(plan: &SamplerPlan, train_records: &[CohortRecord]) -> Result<PlanSummary, SamplingError> {
    let violation = |msg: String| Err(SamplingError::PlanViolation(msg));
    if plan.batch_size == 0 {
        return violation("batch_size is zero".into());
    }
    let n = plan.batches.len();
    for (i, b) in plan.batches.iter().enumerate() {
        let ok = if i + 1 < n {
            b.len() == plan.batch_size
        } else {
            !b.is_empty() && b.len() <= plan.batch_size
        };
        if !ok {
            return violation(format!("batch {i} has {} items (batch size {})", b.len(), plan.batch_size));
        }
    }
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    for id in plan.items() {
        *occurrences.entry(id).or_default() += 1;
    }
    let known: HashSet<&str> = train_records.iter().map(|r| r.id.as_str()).collect();
    if let Some(id) = occurrences.keys().find(|id| !known.contains(*id)) {
        return violation(format!("id {id:?} is not a training record"));
    }

    let attribute = plan.attribute.unwrap_or(GroupingAttribute::Sex);
    let per_batch = batch_group_counts(plan, train_records, attribute)?;
    let mut totals = vec![0usize; attribute.levels().len()];
    for counts in &per_batch {
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let mut group_sizes = vec![0usize; attribute.levels().len()];
    for r in train_records {
        group_sizes[r.level_index(attribute)] += 1;
    }
    let observed: Vec<usize> = (0..group_sizes.len()).filter(|&l| group_sizes[l] > 0).collect();
    let each_once = |ids: &mut dyn Iterator<Item = &CohortRecord>| -> Result<(), SamplingError> {
        let expected: Vec<&str> = ids.map(|r| r.id.as_str()).collect();
        if expected.len() != occurrences.len()
            || expected.iter().any(|id| occurrences.get(id) != Some(&1))
        {
            return Err(SamplingError::PlanViolation(
                "ids are not covered exactly once".into(),
            ));
        }
        Ok(())
    };

    match plan.strategy {
        Strategy::Baseline => each_once(&mut train_records.iter())?,
        Strategy::Balanced => {
            let first = totals[observed[0]];
            if observed.iter().any(|&l| totals[l] != first) {
                return violation(format!("group counts are unequal: {totals:?}"));
            }
            if known.len() != occurrences.len() {
                return violation("some training ids never appear".into());
            }
        }
        Strategy::StratifiedBatch => {
            for (i, counts) in per_batch.iter().enumerate() {
                let present: Vec<usize> = observed.iter().map(|&l| counts[l]).collect();
                let (lo, hi) = (present.iter().min(), present.iter().max());
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if hi - lo > 1 {
                        return violation(format!("batch {i} group counts spread {lo}..{hi}"));
                    }
                }
            }
            let largest = observed.iter().map(|&l| group_sizes[l]).max().unwrap_or(0);
            for &l in observed.iter().filter(|&&l| group_sizes[l] == largest) {
                let ids = train_records.iter().filter(|r| r.level_index(attribute) == l);
                for r in ids {
                    if occurrences.get(r.id.as_str()) != Some(&1) {
                        return violation(format!(
                            "largest-group id {:?} appears {} times",
                            r.id,
                            occurrences.get(r.id.as_str()).copied().unwrap_or(0)
                        ));
                    }
                }
            }
        }
        Strategy::GroupSpecific => {
            let label = plan
                .group_label
                .as_deref()
                .ok_or_else(|| SamplingError::PlanViolation("group plan without group_label".into()))?;
            let level = attribute
                .level_index(label)
                .ok_or_else(|| SamplingError::PlanViolation(format!("unknown group label {label:?}")))?;
            each_once(&mut train_records.iter().filter(|r| r.level_index(attribute) == level))?;
        }
    }

    Ok(PlanSummary {
        strategy: plan.strategy,
        batches: n,
        items: plan.len(),
        distinct_ids: occurrences.len(),
        group_counts: observed
            .iter()
            .map(|&l| (attribute.levels()[l].to_string(), totals[l]))
            .collect(),
    })
}

/// Training records of a table whose split is `train`.
pub fn training_records(table: &CohortTable) -> Vec<CohortRecord> {
    table.in_split(Split::Train)
}
