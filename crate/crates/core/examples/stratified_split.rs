//! Split a 403-patient cohort with the sex x race composition of the knee
//! radiograph study into train/val/test, stratified by sex x race.
//!
//! ```text
//! cargo run --example stratified_split
//! ```

use segfair::ingest::CohortTable;
use segfair::sampling::{self, SplitFractions};
use segfair::{CohortRecord, Race, Sex};

fn main() -> segfair::Result<()> {
    let strata = [
        (Sex::Male, Race::WhiteOrCaucasian, 91),
        (Sex::Male, Race::BlackOrAfricanAmerican, 71),
        (Sex::Female, Race::WhiteOrCaucasian, 102),
        (Sex::Female, Race::BlackOrAfricanAmerican, 139),
    ];
    let mut records = Vec::new();
    for (sex, race, n) in strata {
        for _ in 0..n {
            records.push(CohortRecord::new(format!("p{:03}", records.len() + 1), sex, race)?);
        }
    }
    let table = CohortTable::new(records)?;

    let split = sampling::stratified_split(&table, 2024, SplitFractions::DEFAULT)?;
    println!("{:<32} {:>6} {:>6} {:>6}", "stratum", "train", "val", "test");
    for s in &split.strata {
        let [tr, va, te] = s.sizes;
        println!("{:<32} {tr:>6} {va:>6} {te:>6}", s.stratum.value);
    }
    let [tr, va, te] = split.totals();
    println!("{:<32} {tr:>6} {va:>6} {te:>6}", "total");

    let again = sampling::stratified_split(&table, 2024, SplitFractions::DEFAULT)?;
    assert_eq!(split.to_csv(), again.to_csv());
    println!("same seed, same assignment");
    Ok(())
}
