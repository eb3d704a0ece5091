//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{oracle_dice, oracle_iou, oracle_sd_ser, random_mask, SplitMix, TABLE_ONE};
use segfair::fairness::{self, FairnessReport};
use segfair::ingest::CohortTable;
use segfair::model::SdMode;
use segfair::sampling::{self, SplitFractions};
use segfair::{
    class_dice, class_iou, ClassLabel, CohortRecord, GroupKey, GroupMetrics, GroupingAttribute, Race, Sex, Split,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'a str, Duration, Box<dyn FnOnce() -> Outcome>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Published (group a mean, group b mean, SD, SER) rows: race, then sex.
const PUBLISHED: [(&str, f64, f64, f64, f64); 8] = [
    ("race/Baseline", 0.833, 0.834, 0.001, 1.004),
    ("race/Balanced", 0.836, 0.832, 0.002, 1.023),
    ("race/Stratified", 0.768, 0.767, 0.001, 1.003),
    ("race/Group-Specific", 0.797, 0.801, 0.002, 1.020),
    ("sex/Baseline", 0.836, 0.813, 0.015, 1.137),
    ("sex/Balanced", 0.804, 0.765, 0.027, 1.196),
    ("sex/Stratified", 0.714, 0.716, 0.001, 1.006),
    ("sex/Group-Specific", 0.742, 0.793, 0.036, 1.250),
];

fn table_arithmetic() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for (name, a, b, sd_pub, ser_pub) in PUBLISHED {
        let attr = if name.starts_with("race") { GroupingAttribute::Race } else { GroupingAttribute::Sex };
        let levels = attr.levels();
        let groups = vec![
            GroupMetrics::new(GroupKey::new(attr, levels[0]).unwrap(), 1, a, 1.0),
            GroupMetrics::new(GroupKey::new(attr, levels[1]).unwrap(), 1, b, 1.0),
        ];
        let sd = fairness::group_sd(&groups, SdMode::Sample).map_err(|e| e.to_string())?;
        let ser = fairness::skewed_error_ratio(&groups)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("{name}: SER undefined"))?;
        let (sd_oracle, ser_oracle) = oracle_sd_ser(a, b);
        check((sd - sd_oracle).abs() < 1e-12 && (ser - ser_oracle).abs() < 1e-12, || {
            format!("{name}: library {sd}/{ser} vs oracle {sd_oracle}/{ser_oracle}")
        })?;
        check((sd - sd_pub).abs() <= 0.005, || format!("{name}: SD {sd:.4} vs published {sd_pub}"))?;
        check((ser - ser_pub).abs() <= 0.01, || format!("{name}: SER {ser:.4} vs published {ser_pub}"))?;
        worst.0 = worst.0.max((sd - sd_pub).abs());
        worst.1 = worst.1.max((ser - ser_pub).abs());
    }
    Ok(format!("8 rows, max |dSD| {:.4}, max |dSER| {:.4}", worst.0, worst.1))
}

fn metric_oracle() -> Outcome {
    let mut rng = SplitMix(20_240_601);
    let mut compared = 0;
    for n in 0..200 {
        let gt = random_mask(&mut rng, 32, 32);
        let pred = random_mask(&mut rng, 32, 32);
        for class in ClassLabel::ALL {
            let iou = class_iou(&gt, &pred, class).map_err(|e| e.to_string())?;
            let dice = class_dice(&gt, &pred, class).map_err(|e| e.to_string())?;
            check(iou == oracle_iou(&gt, &pred, class.code()), || format!("pair {n} {class:?}: IoU {iou:?}"))?;
            check(dice == oracle_dice(&gt, &pred, class.code()), || format!("pair {n} {class:?}: Dice {dice:?}"))?;
            if let (Some(i), Some(d)) = (iou, dice) {
                check((d - 2.0 * i / (1.0 + i)).abs() <= 1e-12, || format!("pair {n} {class:?}: identity"))?;
                compared += 1;
            }
        }
    }
    Ok(format!("200 pairs, {compared} present-class comparisons exact"))
}

fn random_cohort(rng: &mut SplitMix) -> (Vec<CohortRecord>, GroupingAttribute) {
    let three = rng.below(2) == 1;
    let n = 10 + rng.below(491) as usize;
    let (attr, levels): (_, Vec<(Sex, Race)>) = if three {
        let all = [
            (Sex::Male, Race::WhiteOrCaucasian),
            (Sex::Male, Race::BlackOrAfricanAmerican),
            (Sex::Female, Race::WhiteOrCaucasian),
            (Sex::Female, Race::BlackOrAfricanAmerican),
        ];
        let skip = rng.below(4) as usize;
        (GroupingAttribute::SexByRace, all.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, l)| *l).collect())
    } else if rng.below(2) == 0 {
        (GroupingAttribute::Sex, vec![(Sex::Male, Race::WhiteOrCaucasian), (Sex::Female, Race::BlackOrAfricanAmerican)])
    } else {
        (GroupingAttribute::Race, vec![(Sex::Male, Race::WhiteOrCaucasian), (Sex::Male, Race::BlackOrAfricanAmerican)])
    };
    // Every group gets at least one record; the rest are skewed at random.
    let weights: Vec<u64> = levels.iter().map(|_| 1 + rng.below(10)).collect();
    let total: u64 = weights.iter().sum();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let g = if i < levels.len() {
            i
        } else {
            let mut r = rng.below(total);
            weights.iter().position(|&w| if r < w { true } else { r -= w; false }).unwrap()
        };
        let (sex, race) = levels[g];
        records.push(CohortRecord::new(format!("c{i:03}"), sex, race).unwrap().with_split(Split::Train));
    }
    (records, attr)
}

fn sampler_suite(dir: &Path) -> Outcome {
    let mut rng = SplitMix(7);
    let mut group_sizes = HashSet::new();
    for cohort in 0..100 {
        let (train, attr) = random_cohort(&mut rng);
        let seed = rng.next();
        let batch = 4 + rng.below(29) as usize;
        let err = |e: segfair::sampling::SamplingError| format!("cohort {cohort}: {e}");
        let mut by_group: HashMap<String, Vec<&str>> = HashMap::new();
        for r in &train {
            by_group.entry(r.group_key(attr).value).or_default().push(&r.id);
        }
        group_sizes.insert(by_group.len());
        let largest = by_group.values().map(Vec::len).max().unwrap();

        let balanced = sampling::oversample_plan(&train, attr, seed, batch).map_err(err)?;
        let summary = sampling::verify_plan(&balanced, &train).map_err(err)?;
        check(summary.group_counts.iter().all(|(_, n)| *n == largest), || {
            format!("cohort {cohort}: oversampled counts {:?}", summary.group_counts)
        })?;

        let strat = sampling::stratified_batch_plan(&train, attr, seed, batch).map_err(err)?;
        let observed: HashSet<usize> = train.iter().map(|r| r.level_index(attr)).collect();
        for counts in sampling::batch_group_counts(&strat, &train, attr).map_err(err)? {
            let live: Vec<usize> = observed.iter().map(|&i| counts[i]).collect();
            let spread = live.iter().max().unwrap() - live.iter().min().unwrap();
            check(spread <= 1, || format!("cohort {cohort}: batch counts {counts:?}"))?;
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for id in strat.items() {
            *seen.entry(id).or_default() += 1;
        }
        let biggest = by_group.values().find(|ids| ids.len() == largest).unwrap();
        check(biggest.iter().all(|id| seen.get(id) == Some(&1)), || {
            format!("cohort {cohort}: largest group not consumed exactly once")
        })?;
        check(strat.len() == largest * by_group.len(), || format!("cohort {cohort}: stratified length"))?;

        let parts = sampling::group_partition(&train, attr, seed, batch).map_err(err)?;
        let mut covered = HashSet::new();
        for (label, plan) in &parts {
            for id in plan.items() {
                check(covered.insert(id.to_string()), || format!("cohort {cohort}: {id} in two partitions"))?;
                check(by_group[label].contains(&id), || format!("cohort {cohort}: {id} outside {label}"))?;
            }
        }
        check(covered.len() == train.len(), || format!("cohort {cohort}: partition not exhaustive"))?;

        for (name, build) in [
            ("balanced", sampling::oversample_plan as fn(&[CohortRecord], GroupingAttribute, u64, usize) -> _),
            ("stratified", sampling::stratified_batch_plan),
        ] {
            let a = dir.join(format!("{cohort}-{name}-a.json"));
            let b = dir.join(format!("{cohort}-{name}-b.json"));
            sampling::write_plan(&build(&train, attr, seed, batch).map_err(err)?, &a).map_err(err)?;
            sampling::write_plan(&build(&train, attr, seed, batch).map_err(err)?, &b).map_err(err)?;
            check(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), || {
                format!("cohort {cohort}: {name} plan bytes differ")
            })?;
        }
    }
    let mut sizes: Vec<_> = group_sizes.into_iter().collect();
    sizes.sort();
    Ok(format!("100 cohorts, group counts {sizes:?}"))
}

fn split_correctness() -> Outcome {
    let table = CohortTable::new(common::cohort(&TABLE_ONE, None)).map_err(|e| e.to_string())?;
    let split = sampling::stratified_split(&table, 42, SplitFractions::DEFAULT).map_err(|e| e.to_string())?;
    let totals = split.totals();
    check(totals == [282, 60, 61], || format!("totals {totals:?}"))?;
    let fractions = [0.70, 0.15, 0.15];
    let mut worst = 0.0f64;
    for s in &split.strata {
        for (size, f) in s.sizes.iter().zip(fractions) {
            worst = worst.max((*size as f64 - s.total() as f64 * f).abs());
        }
    }
    check(worst <= 1.0, || format!("stratum deviation {worst}"))?;
    let again = sampling::stratified_split(&table, 42, SplitFractions::DEFAULT).map_err(|e| e.to_string())?;
    check(split.to_csv() == again.to_csv(), || "not deterministic".into())?;
    Ok(format!("{totals:?}, max stratum deviation {worst:.2}"))
}

fn cli_audit(dir: &Path, male: f64, female: f64) -> Result<FairnessReport, String> {
    let run = |args: &[String]| -> Result<String, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_segfair"))
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    };
    let args = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    run(&args(&format!(
        "synth --out cohort --group sex --target Male={male} --target Female={female} --count 20 --size 64 --seed 1"
    )))?;
    let text = run(&args(
        "audit --gt cohort/gt --pred cohort/pred --meta cohort/metadata.csv --group sex --format json",
    ))?;
    let last = text.lines().last().ok_or("empty audit output")?;
    let mut reports = fairness::parse_reports(last).map_err(|e| e.to_string())?;
    Ok(reports.remove(0))
}

fn end_to_end(root: &Path) -> Outcome {
    let skewed = root.join("skewed");
    let equal = root.join("equal");
    std::fs::create_dir_all(&skewed).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&equal).map_err(|e| e.to_string())?;
    let r = cli_audit(&skewed, 0.85, 0.70)?;
    let ser = r.ser.value().ok_or("SER not a number")?;
    let sd = r.sd.value().ok_or("SD not a number")?;
    check((ser - 2.0).abs() <= 0.2, || format!("SER {ser:.4}"))?;
    check((sd - 0.106).abs() <= 0.02, || format!("SD {sd:.4}"))?;
    let e = cli_audit(&equal, 0.85, 0.85)?;
    let ser_eq = e.ser.value().ok_or("equal-target SER not a number")?;
    check(ser_eq <= 1.05, || format!("equal-target SER {ser_eq:.4}"))?;
    Ok(format!("0.85 vs 0.70: SER {ser:.3}, SD {sd:.3}; equal targets: SER {ser_eq:.3}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let plans = tmp.path().join("plans");
    std::fs::create_dir_all(&plans).unwrap();
    let e2e = tmp.path().join("e2e");

    let criteria: Vec<Criterion> = vec![
        ("published SD/SER arithmetic", Duration::from_secs(1), Box::new(table_arithmetic)),
        ("metric oracle equivalence", Duration::from_secs(10), Box::new(metric_oracle)),
        ("sampler invariant suite", Duration::from_secs(30), Box::new(move || sampler_suite(&plans))),
        ("split correctness", Duration::from_secs(10), Box::new(split_correctness)),
        ("end-to-end disparity detection", Duration::from_secs(60), Box::new(move || end_to_end(&e2e))),
    ];

    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if took <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {took:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({took:.2?})");
            }
        }
    }
    println!(
        "NOTE  not reproduced: absolute per-group IoUs of the original knee radiograph study \
         (e.g. baseline 0.833/0.834 by race, and 0.762/0.781 on the two example radiographs) need \
         the original images and annotations; they are covered only by the arithmetic and property checks above"
    );
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
