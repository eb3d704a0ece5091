mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segfair::ingest::{self, CohortTable, MaskFormat};
use segfair::sampling::SamplerPlan;
use segfair::{LabelMask, Split};

fn segfair(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segfair"))
        .args(args)
        .current_dir(cwd)
        .env("SEGFAIR_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, male: &str, female: &str) {
    let o = segfair(
        &[
            "synth", "--out", "cohort", "--group", "sex", "--target", male, "--target", female, "--count", "6",
            "--size", "32", "--seed", "5",
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

const AUDIT: &[&str] = &[
    "audit", "--gt", "cohort/gt", "--pred", "cohort/pred", "--meta", "cohort/metadata.csv", "--group", "sex",
];

#[test]
fn usage_errors_exit_2_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["split", "--meta", "m.csv", "--out", "s.csv"][..],
        &["split", "--meta", "m.csv", "--seed", "1", "--out", "s.csv", "--bogus"],
        &["plan", "--meta", "m.csv", "--strategy", "shuffle", "--attr", "sex", "--seed", "1", "--out", "p.json"],
        &["frobnicate"],
        &["audit", "--gt", "g"],
    ] {
        let o = segfair(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_prediction_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "Male=0.8", "Female=0.8");
    fs::remove_file(dir.path().join("cohort/pred/s004.png")).unwrap();
    let o = segfair(AUDIT, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("s004"), "{}", stderr(&o));
}

#[test]
fn audit_formats_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "Male=0.9", "Female=0.9");
    let mut args = AUDIT.to_vec();
    args.extend(["--format", "json", "--model-name", "equal"]);
    let first = segfair(&args, dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let again = segfair(&args, dir.path());
    assert_eq!(first.stdout, again.stdout);
    let text = stdout(&first);
    assert_eq!(text.lines().count(), 1);
    let report = &segfair::fairness::parse_reports(&text).unwrap()[0];
    assert!(report.ser.value().unwrap() <= 1.05);

    let csv = segfair(&[AUDIT, &["--format", "csv"]].concat(), dir.path());
    assert!(stdout(&csv).starts_with("model,Male,Female,sd,ser\n"));
    let md = segfair(AUDIT, dir.path());
    assert!(stdout(&md).contains("| Model | Male | Female | SD | SER |"));

    fs::write(dir.path().join("r.json"), text).unwrap();
    let combined = segfair(&["report", "--input", "r.json", "--input", "r.json", "--format", "csv"], dir.path());
    assert_eq!(combined.status.code(), Some(0));
    assert_eq!(stdout(&combined).lines().count(), 3);
}

#[test]
fn audit_bad_metadata_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "Male=0.8", "Female=0.8");
    let meta = dir.path().join("cohort/metadata.csv");
    let text = fs::read_to_string(&meta).unwrap().replacen(",M,", ",X,", 1);
    fs::write(&meta, text).unwrap();
    let o = segfair(AUDIT, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('X'));
}

fn table_one_metadata(dir: &Path, split: Option<Split>) {
    let table = CohortTable::new(common::cohort(&common::TABLE_ONE, split)).unwrap();
    ingest::write_metadata(dir.join("meta.csv"), &table).unwrap();
}

#[test]
fn split_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    table_one_metadata(dir.path(), None);
    let a = segfair(&["split", "--meta", "meta.csv", "--seed", "9", "--out", "a.csv"], dir.path());
    let b = segfair(&["split", "--meta", "meta.csv", "--seed", "9", "--out", "b.csv"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let table = |o: &Output| stdout(o).lines().take(6).collect::<Vec<_>>().join("\n");
    assert_eq!(table(&a), table(&b));
    assert!(stdout(&a).lines().last().unwrap().starts_with("wrote"));
    assert!(stdout(&a).contains(" 282 "));
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    let rows = segfair::sampling::read_split(dir.path().join("a.csv")).unwrap();
    let count = |s| rows.iter().filter(|(_, x)| *x == s).count();
    assert_eq!([count(Split::Train), count(Split::Val), count(Split::Test)], [282, 60, 61]);
}

#[test]
fn split_rejects_tiny_stratum() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("meta.csv"), "id,sex,race\na,M,WC\nb,M,WC\nc,F,WC\nd,F,WC\ne,F,WC\n").unwrap();
    let o = segfair(&["split", "--meta", "meta.csv", "--seed", "1", "--out", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plan_requires_split_information() {
    let dir = tempfile::tempdir().unwrap();
    table_one_metadata(dir.path(), None);
    let o = segfair(
        &["plan", "--meta", "meta.csv", "--strategy", "baseline", "--attr", "sex", "--seed", "1", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("p.json").exists());
}

#[test]
fn plans_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    table_one_metadata(dir.path(), Some(Split::Train));
    let plan = |strategy: &str, out: &str| {
        let o = segfair(
            &[
                "plan", "--meta", "meta.csv", "--strategy", strategy, "--attr", "sex", "--batch-size", "16", "--seed",
                "3", "--out", out,
            ],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };

    assert!(plan("balanced", "bal.json").contains("Male=241 Female=241"));

    plan("stratified", "strat.json");
    let strat = SamplerPlan::from_json(&fs::read_to_string(dir.path().join("strat.json")).unwrap()).unwrap();
    let table = ingest::load_metadata(dir.path().join("meta.csv")).unwrap();
    let counts = segfair::sampling::batch_group_counts(&strat, &table.records, segfair::GroupingAttribute::Sex).unwrap();
    let (last, full) = counts.split_last().unwrap();
    assert!(full.iter().all(|c| c == &vec![8, 8]));
    assert_eq!(last, &vec![1, 1]);
    let v = segfair(&["plan", "--meta", "meta.csv", "--verify", "strat.json"], dir.path());
    assert_eq!(v.status.code(), Some(0), "{}", stderr(&v));

    let base = plan("baseline", "base.json");
    assert!(base.contains("Male=162 Female=241"));
    let first = fs::read(dir.path().join("base.json")).unwrap();
    plan("baseline", "base.json");
    assert_eq!(first, fs::read(dir.path().join("base.json")).unwrap());

    plan("group", "grp.json");
    assert!(dir.path().join("grp_Male.json").exists());
    assert!(dir.path().join("grp_Female.json").exists());
}

#[test]
fn tampered_plan_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    table_one_metadata(dir.path(), Some(Split::Train));
    let o = segfair(
        &["plan", "--meta", "meta.csv", "--strategy", "stratified", "--attr", "race", "--seed", "3", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("p.json");
    let mut plan = SamplerPlan::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    plan.batches[0].pop();
    fs::write(&path, plan.to_json()).unwrap();
    let v = segfair(&["plan", "--meta", "meta.csv", "--verify", "p.json"], dir.path());
    assert_eq!(v.status.code(), Some(1));
}

fn square(x0: usize) -> LabelMask {
    let mut data = vec![0u8; 100];
    for y in 2..6 {
        for x in x0..x0 + 4 {
            data[y * 10 + x] = 1;
        }
    }
    LabelMask::new(10, 10, data).unwrap()
}

#[test]
fn agreement_from_annotator_files() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    fs::create_dir(&masks).unwrap();
    ingest::write_mask(masks.join("a__img1.png"), &square(2), MaskFormat::Png).unwrap();
    ingest::write_mask(masks.join("b__img1.pgm"), &square(2), MaskFormat::Pgm).unwrap();
    let o = segfair(&["agree", "--masks", "masks"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("IoU 1.000, Dice 1.000"));

    // Shifting one square by two columns: overlap 8 of 24 pixels.
    ingest::write_mask(masks.join("b__img1.pgm"), &square(4), MaskFormat::Pgm).unwrap();
    let o = segfair(&["agree", "--masks", "masks"], dir.path());
    assert!(stdout(&o).contains("IoU 0.333, Dice 0.500"), "{}", stdout(&o));

    fs::remove_file(masks.join("b__img1.pgm")).unwrap();
    let o = segfair(&["agree", "--masks", "masks"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_tabulates_cohort() {
    let dir = tempfile::tempdir().unwrap();
    table_one_metadata(dir.path(), None);
    let o = segfair(&["report", "--meta", "meta.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("| Female / Black/African American | 139 | 34.5% |"), "{text}");
    assert!(text.contains("| Total | 403 | 100.0% |"));
}
