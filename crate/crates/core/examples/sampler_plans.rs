//! Build the four sampler plans (baseline, balanced, stratified batches,
//! group-specific) for a small imbalanced training set and check each one.
//!
//! ```text
//! cargo run --example sampler_plans
//! ```

use segfair::sampling::{self, SamplerPlan};
use segfair::{CohortRecord, GroupingAttribute, Race, Sex, Split};

fn describe(label: &str, plan: &SamplerPlan, train: &[CohortRecord]) -> segfair::Result<()> {
    let summary = sampling::verify_plan(plan, train)?;
    let counts: Vec<String> = summary.group_counts.iter().map(|(g, n)| format!("{g}={n}")).collect();
    println!(
        "{label:<16} {:>3} batches {:>4} items  {}",
        summary.batches,
        summary.items,
        counts.join(" ")
    );
    Ok(())
}

fn main() -> segfair::Result<()> {
    let mut train = Vec::new();
    for i in 0..40 {
        let sex = if i < 30 { Sex::Female } else { Sex::Male };
        let race = if i % 3 == 0 { Race::WhiteOrCaucasian } else { Race::BlackOrAfricanAmerican };
        train.push(CohortRecord::new(format!("t{i:02}"), sex, race)?.with_split(Split::Train));
    }
    let ids: Vec<String> = train.iter().map(|r| r.id.clone()).collect();
    let attr = GroupingAttribute::Sex;
    let (seed, batch) = (7, 16);

    describe("baseline", &sampling::baseline_plan(&ids, seed, batch)?, &train)?;
    describe("balanced", &sampling::oversample_plan(&train, attr, seed, batch)?, &train)?;

    let stratified = sampling::stratified_batch_plan(&train, attr, seed, batch)?;
    describe("stratified", &stratified, &train)?;
    for (i, counts) in sampling::batch_group_counts(&stratified, &train, attr)?.iter().enumerate() {
        println!("  batch {i}: Male {} Female {}", counts[0], counts[1]);
    }

    for (label, plan) in sampling::group_partition(&train, attr, seed, batch)? {
        describe(&format!("group {label}"), &plan, &train)?;
    }

    print!("{}", sampling::baseline_plan(&ids[..5], seed, 2)?.to_json());
    Ok(())
}
