//! Synthetic cohorts with controllable per-group IoU.
//!
//! Ground truth is four non-overlapping blobs, one per foreground class.
//! Predictions are derived from it by a per-class sequence of pixel edits
//! that each lower the class IoU by a known direction: removing a true pixel
//! (erosion from the boundary inward) or adding a nearby background pixel
//! (dilation outward). The number of edits applied is found by bisection,
//! measuring each candidate with [`crate::metrics::class_iou`].

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{write_mask, write_metadata, CohortTable, IngestError, MaskFormat};
use crate::metrics::{class_iou, mask_scores};
use crate::model::{AuditConfig, ClassLabel, CohortRecord, GroupKey, LabelMask, Race, Sex};
use crate::rng::PlanRng;

pub const MIN_SIZE: usize = 16;
/// Bisection steps allowed per class.
pub const MAX_BISECTION_STEPS: usize = 64;
pub const DEFAULT_IOU_TOLERANCE: f64 = 0.02;
/// Background pixels within this 4-connected distance of a class may be
/// added to it.
const DILATION_RADIUS: u32 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("image must be at least {MIN_SIZE}x{MIN_SIZE}, got {width}x{height}")]
    SizeTooSmall { width: usize, height: usize },
    #[error("target IoU {0} outside [0, 1]")]
    InvalidTarget(f64),
    #[error("tolerance {0} must be finite and non-negative")]
    InvalidTolerance(f64),
    #[error("ground truth has no foreground pixels")]
    NoForeground,
    #[error("could not reach IoU {target} within {tol} (best {achieved})")]
    Unachievable { target: f64, tol: f64, achieved: f64 },
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("group {group}: measured mean IoU {measured:.4} is more than {allowed} from target {target}")]
    GroupOffTarget {
        group: String,
        target: f64,
        measured: f64,
        allowed: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Places one rectangle or ellipse per foreground class, each inside its own
/// image quadrant with a one-pixel margin, so blobs never touch.
pub fn generate_gt(seed: u64, width: usize, height: usize) -> Result<LabelMask, SynthError> {
    if width < MIN_SIZE || height < MIN_SIZE {
        return Err(SynthError::SizeTooSmall { width, height });
    }
    let mut rng = PlanRng::new(seed);
    let mut classes = ClassLabel::FOREGROUND;
    rng.shuffle(&mut classes);
    let mut data = vec![ClassLabel::Background.code(); width * height];
    let (half_w, half_h) = (width / 2, height / 2);
    for (quadrant, class) in classes.into_iter().enumerate() {
        let (qx, qy) = (quadrant % 2, quadrant / 2);
        let x0 = qx * half_w + 1;
        let y0 = qy * half_h + 1;
        let inner_w = if qx == 0 { half_w } else { width - half_w } - 2;
        let inner_h = if qy == 0 { half_h } else { height - half_h } - 2;
        let extent = |rng: &mut PlanRng, inner: usize| {
            let frac = 0.55 + 0.4 * rng.unit();
            ((inner as f64 * frac).round() as usize).clamp(3, inner)
        };
        let bw = extent(&mut rng, inner_w);
        let bh = extent(&mut rng, inner_h);
        let bx = x0 + rng.below(inner_w - bw + 1);
        let by = y0 + rng.below(inner_h - bh + 1);
        let ellipse = rng.coin();
        let (cx, cy) = (bw as f64 / 2.0, bh as f64 / 2.0);
        for y in 0..bh {
            for x in 0..bw {
                let inside = !ellipse || {
                    let dx = (x as f64 + 0.5 - cx) / cx;
                    let dy = (y as f64 + 0.5 - cy) / cy;
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    data[(by + y) * width + bx + x] = class.code();
                }
            }
        }
    }
    Ok(LabelMask::new(width, height, data).expect("blob codes are valid"))
}

/// 4-connected distance from every pixel to the nearest pixel where
/// `source` holds, capped at `u32::MAX` when no source exists.
fn distance_field(width: usize, height: usize, source: impl Fn(usize) -> bool, border_is_source: bool) -> Vec<u32> {
    let mut dist = vec![u32::MAX; width * height];
    let mut queue = VecDeque::new();
    for (i, d) in dist.iter_mut().enumerate() {
        let (x, y) = (i % width, i / width);
        let on_border = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
        if source(i) {
            *d = 0;
            queue.push_back(i);
        } else if border_is_source && on_border {
            *d = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        let next = dist[i] + 1;
        let mut visit = |j: usize| {
            if dist[j] > next {
                dist[j] = next;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
    dist
}

#[derive(Debug, Clone, Copy)]
enum Edit {
    /// Set a true pixel of the class to background.
    Remove(usize),
    /// Label a background pixel with the class.
    Add(usize),
}

/// Per-class edit sequences. Every prefix lowers (or keeps) the class IoU,
/// and edits of different classes touch disjoint pixels.
fn edit_sequences(gt: &LabelMask, rng: &mut PlanRng) -> Vec<(ClassLabel, Vec<Edit>)> {
    let (w, h) = gt.dims();
    let data = gt.data();
    let bg = ClassLabel::Background.code();

    let mut claimed = vec![false; data.len()];
    let mut out = Vec::new();
    for class in ClassLabel::FOREGROUND {
        let code = class.code();
        if !data.contains(&code) {
            continue;
        }
        // Erosion order: depth from the class boundary, random within a layer.
        let depth = distance_field(w, h, |i| data[i] != code, true);
        let mut removals: Vec<(u32, u64, usize)> = (0..data.len())
            .filter(|&i| data[i] == code)
            .map(|i| (depth[i], rng.next_u64(), i))
            .collect();
        removals.sort_unstable();

        // Dilation order: distance from the class, random within a ring.
        let reach = distance_field(w, h, |i| data[i] == code, false);
        let mut additions: Vec<(u32, u64, usize)> = (0..data.len())
            .filter(|&i| data[i] == bg && !claimed[i] && reach[i] <= DILATION_RADIUS)
            .map(|i| (reach[i], rng.next_u64(), i))
            .collect();
        additions.sort_unstable();
        for &(_, _, i) in &additions {
            claimed[i] = true;
        }

        let mut edits = Vec::with_capacity(removals.len() + additions.len());
        let (mut r, mut a) = (removals.into_iter(), additions.into_iter().peekable());
        for (_, _, i) in r.by_ref() {
            while a.peek().is_some() && rng.coin() {
                edits.push(Edit::Add(a.next().expect("peeked").2));
            }
            edits.push(Edit::Remove(i));
        }
        edits.extend(a.map(|(_, _, i)| Edit::Add(i)));
        out.push((class, edits));
    }
    out
}

fn apply_edits(data: &mut [u8], class: ClassLabel, edits: &[Edit]) {
    for e in edits {
        match *e {
            Edit::Remove(i) => data[i] = ClassLabel::Background.code(),
            Edit::Add(i) => data[i] = class.code(),
        }
    }
}

/// Derives a prediction from `gt` whose foreground mean IoU lies within
/// `tol` of `target`. A target of 1 returns `gt` unchanged; a target of 0
/// removes every true pixel, so each class's prediction is disjoint from its
/// ground truth.
pub fn degrade_mask(gt: &LabelMask, target: f64, tol: f64, seed: u64) -> Result<LabelMask, SynthError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(SynthError::InvalidTarget(target));
    }
    if !tol.is_finite() || tol < 0.0 {
        return Err(SynthError::InvalidTolerance(tol));
    }
    if gt.data().iter().all(|&c| c == ClassLabel::Background.code()) {
        return Err(SynthError::NoForeground);
    }
    if target == 1.0 {
        return Ok(gt.clone());
    }

    let (w, h) = gt.dims();
    let mut rng = PlanRng::new(seed);
    let mut pred = gt.data().to_vec();
    for (class, edits) in edit_sequences(gt, &mut rng) {
        let measure = |k: usize| {
            let mut data = gt.data().to_vec();
            apply_edits(&mut data, class, &edits[..k]);
            let candidate = LabelMask::new(w, h, data).expect("edits keep codes valid");
            class_iou(gt, &candidate, class)
                .expect("same dimensions")
                .expect("class present in gt")
        };
        // Smallest prefix length whose IoU is at or below the target.
        let (mut lo, mut hi) = (0usize, edits.len());
        let mut steps = 0;
        while lo < hi && steps < MAX_BISECTION_STEPS {
            let mid = lo + (hi - lo) / 2;
            if measure(mid) <= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
            steps += 1;
        }
        let mut k = lo;
        if k > 0 && (measure(k - 1) - target).abs() < (measure(k) - target).abs() {
            k -= 1;
        }
        apply_edits(&mut pred, class, &edits[..k]);
    }

    let pred = LabelMask::new(w, h, pred).expect("edits keep codes valid");
    let achieved = mask_scores(gt, &pred, &AuditConfig::default())
        .expect("gt has foreground")
        .mean_iou;
    if (achieved - target).abs() > tol {
        return Err(SynthError::Unachievable { target, tol, achieved });
    }
    Ok(pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub key: GroupKey,
    pub count: usize,
    pub target_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub groups: Vec<SynthGroup>,
    pub width: usize,
    pub height: usize,
    pub iou_tolerance: f64,
    pub seed: u64,
    pub format: MaskFormat,
}

impl SynthSpec {
    pub fn new(groups: Vec<SynthGroup>, width: usize, height: usize, seed: u64) -> Self {
        Self {
            groups,
            width,
            height,
            iou_tolerance: DEFAULT_IOU_TOLERANCE,
            seed,
            format: MaskFormat::Png,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidSpec(m));
        if self.groups.is_empty() {
            return invalid("no groups".into());
        }
        if self.width < MIN_SIZE || self.height < MIN_SIZE {
            return Err(SynthError::SizeTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        if !self.iou_tolerance.is_finite() || self.iou_tolerance < 0.0 {
            return Err(SynthError::InvalidTolerance(self.iou_tolerance));
        }
        let attribute = self.groups[0].key.attribute;
        for (i, g) in self.groups.iter().enumerate() {
            if g.count == 0 {
                return invalid(format!("group {} has count 0", g.key));
            }
            if !(0.0..=1.0).contains(&g.target_iou) {
                return Err(SynthError::InvalidTarget(g.target_iou));
            }
            if g.key.attribute != attribute {
                return invalid("groups mix attributes".into());
            }
            if self.groups[..i].iter().any(|o| o.key == g.key) {
                return invalid(format!("group {} listed twice", g.key));
            }
        }
        Ok(())
    }
}

/// What [`generate_cohort`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub table: CohortTable,
    pub metadata_path: PathBuf,
    pub gt_dir: PathBuf,
    pub pred_dir: PathBuf,
    /// Measured mean IoU per group, in spec order.
    pub measured: Vec<(GroupKey, f64)>,
}

/// Writes `metadata.csv`, `gt/<id>.<ext>` and `pred/<id>.<ext>` under
/// `out_dir`. Attributes a group key leaves open alternate between levels.
pub fn generate_cohort(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthCohort, SynthError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let gt_dir = out_dir.join("gt");
    let pred_dir = out_dir.join("pred");
    for dir in [&gt_dir, &pred_dir] {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
    }

    let mut rng = PlanRng::new(spec.seed);
    let mut jobs = Vec::new();
    for (g, group) in spec.groups.iter().enumerate() {
        let (sex, race) = group.key.attributes();
        for i in 0..group.count {
            let id = format!("s{:03}", jobs.len() + 1);
            let record = CohortRecord::new(
                id,
                sex.unwrap_or(Sex::ALL[i % Sex::ALL.len()]),
                race.unwrap_or(Race::ALL[i % Race::ALL.len()]),
            )
            .expect("generated ids are valid");
            jobs.push((g, record, rng.next_u64(), rng.next_u64()));
        }
    }

    let cfg = AuditConfig::default();
    let images: Vec<Result<(LabelMask, LabelMask, f64), SynthError>> = jobs
        .par_iter()
        .map(|(g, _, gt_seed, pred_seed)| {
            let gt = generate_gt(*gt_seed, spec.width, spec.height)?;
            let pred = degrade_mask(&gt, spec.groups[*g].target_iou, spec.iou_tolerance, *pred_seed)?;
            let iou = mask_scores(&gt, &pred, &cfg).expect("gt has foreground").mean_iou;
            Ok((gt, pred, iou))
        })
        .collect();
    let images = images.into_iter().collect::<Result<Vec<_>, _>>()?;

    let ext = spec.format.extension();
    jobs.par_iter()
        .zip(images.par_iter())
        .try_for_each(|((_, record, _, _), (gt, pred, _))| {
            write_mask(gt_dir.join(format!("{}.{ext}", record.id)), gt, spec.format)?;
            write_mask(pred_dir.join(format!("{}.{ext}", record.id)), pred, spec.format)
        })?;

    let mut sums = vec![(0.0, 0usize); spec.groups.len()];
    for ((g, ..), (_, _, iou)) in jobs.iter().zip(&images) {
        sums[*g].0 += iou;
        sums[*g].1 += 1;
    }
    let allowed = spec.iou_tolerance + 0.01;
    let mut measured = Vec::with_capacity(spec.groups.len());
    for (group, (sum, n)) in spec.groups.iter().zip(sums) {
        let mean = sum / n as f64;
        if (mean - group.target_iou).abs() > allowed {
            return Err(SynthError::GroupOffTarget {
                group: group.key.value.clone(),
                target: group.target_iou,
                measured: mean,
                allowed,
            });
        }
        measured.push((group.key.clone(), mean));
    }

    let mut table = CohortTable::new(jobs.into_iter().map(|(_, r, ..)| r).collect())?;
    let metadata_path = out_dir.join("metadata.csv");
    write_metadata(&metadata_path, &table)?;
    table.source_path = metadata_path.clone();
    Ok(SynthCohort {
        table,
        metadata_path,
        gt_dir,
        pred_dir,
        measured,
    })
}
