//! Generate a synthetic cohort where one sex is segmented worse than the
//! other, then audit it from disk the way `segfair audit` does.
//!
//! ```text
//! cargo run --example audit_synthetic_cohort
//! ```

use segfair::fairness::{self, ReportFormat};
use segfair::synth::{self, SynthGroup, SynthSpec};
use segfair::{ingest, AuditConfig, GroupKey, GroupingAttribute};

fn main() -> segfair::Result<()> {
    let out = std::env::temp_dir().join("segfair-synth-audit");
    let groups = vec![
        SynthGroup {
            key: GroupKey::new(GroupingAttribute::Sex, "Male")?,
            count: 20,
            target_iou: 0.85,
        },
        SynthGroup {
            key: GroupKey::new(GroupingAttribute::Sex, "Female")?,
            count: 20,
            target_iou: 0.70,
        },
    ];
    let spec = SynthSpec::new(groups, 64, 64, 11);
    let cohort = synth::generate_cohort(&spec, &out)?;
    for (group, iou) in &cohort.measured {
        println!("generated {group}: measured mean IoU {iou:.4}");
    }

    let cfg = AuditConfig::new(GroupingAttribute::Sex);
    let table = ingest::load_metadata(&cohort.metadata_path)?;
    let pairs = ingest::resolve_pairs(&table, &cohort.gt_dir, &cohort.pred_dir)?;
    let scored = fairness::score_cohort(&table, &pairs, &cfg)?;
    let report = fairness::build_report("synthetic", &scored, &cfg)?;
    print!("{}", fairness::render_report(&report, ReportFormat::Markdown));
    println!("SER {}  SD {}", report.ser, report.sd);
    Ok(())
}
