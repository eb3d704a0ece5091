#![allow(dead_code)]

use segfair::{CohortRecord, LabelMask, Race, Sex, Split};

/// splitmix64; kept separate from the crate's generator so test inputs do
/// not depend on the code under test.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

/// Random 5-class mask with a per-mask bias toward background.
pub fn random_mask(rng: &mut SplitMix, w: usize, h: usize) -> LabelMask {
    let bias = rng.below(5);
    let data = (0..w * h)
        .map(|_| {
            let r = rng.below(5 + bias);
            if r >= 5 { 0 } else { r as u8 }
        })
        .collect();
    LabelMask::new(w, h, data).unwrap()
}

/// Naive per-class counts: (intersection, union, |gt|, |pred|).
pub fn oracle_counts(gt: &LabelMask, pred: &LabelMask, class: u8) -> (u64, u64, u64, u64) {
    let (w, h) = gt.dims();
    let (mut inter, mut uni, mut g, mut p) = (0, 0, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let a = gt.data()[y * w + x] == class;
            let b = pred.data()[y * w + x] == class;
            if a && b {
                inter += 1;
            }
            if a || b {
                uni += 1;
            }
            if a {
                g += 1;
            }
            if b {
                p += 1;
            }
        }
    }
    (inter, uni, g, p)
}

pub fn oracle_iou(gt: &LabelMask, pred: &LabelMask, class: u8) -> Option<f64> {
    let (i, u, _, _) = oracle_counts(gt, pred, class);
    (u > 0).then(|| i as f64 / u as f64)
}

pub fn oracle_dice(gt: &LabelMask, pred: &LabelMask, class: u8) -> Option<f64> {
    let (i, _, g, p) = oracle_counts(gt, pred, class);
    (g + p > 0).then(|| 2.0 * i as f64 / (g + p) as f64)
}

/// Sex x race counts of the 403-patient knee cohort.
pub const TABLE_ONE: [(Sex, Race, usize); 4] = [
    (Sex::Male, Race::WhiteOrCaucasian, 91),
    (Sex::Male, Race::BlackOrAfricanAmerican, 71),
    (Sex::Female, Race::WhiteOrCaucasian, 102),
    (Sex::Female, Race::BlackOrAfricanAmerican, 139),
];

pub fn cohort(strata: &[(Sex, Race, usize)], split: Option<Split>) -> Vec<CohortRecord> {
    let mut out = Vec::new();
    for &(sex, race, n) in strata {
        for _ in 0..n {
            let r = CohortRecord::new(format!("p{:04}", out.len() + 1), sex, race).unwrap();
            out.push(match split {
                Some(s) => r.with_split(s),
                None => r,
            });
        }
    }
    out
}

/// Sample SD and SER of two group mean IoUs, straight from the definitions.
pub fn oracle_sd_ser(a: f64, b: f64) -> (f64, f64) {
    let mean = (a + b) / 2.0;
    let sd = (((a - mean).powi(2) + (b - mean).powi(2)) / 1.0).sqrt();
    let (ea, eb) = (1.0 - a, 1.0 - b);
    (sd, ea.max(eb) / ea.min(eb))
}
