//! Recompute SD and SER from published group mean IoUs and render the
//! comparison table in every output format.
//!
//! ```text
//! cargo run --example fairness_tables
//! ```

use segfair::fairness::{self, FairnessReport, ReportFormat, Statistic};
use segfair::model::SdMode;
use segfair::{AuditConfig, GroupKey, GroupMetrics, GroupingAttribute};

fn row(model: &str, male: f64, female: f64) -> segfair::Result<FairnessReport> {
    let groups = vec![
        GroupMetrics::new(GroupKey::new(GroupingAttribute::Sex, "Male")?, 1, male, 1.0),
        GroupMetrics::new(GroupKey::new(GroupingAttribute::Sex, "Female")?, 1, female, 1.0),
    ];
    let sd = fairness::group_sd(&groups, SdMode::Sample)?;
    let ser = fairness::skewed_error_ratio(&groups)?;
    Ok(FairnessReport {
        schema_version: fairness::REPORT_SCHEMA_VERSION.to_string(),
        model_name: model.to_string(),
        grouping: GroupingAttribute::Sex,
        groups,
        sd: Statistic::Value(sd),
        ser: ser.map_or(Statistic::Undefined, Statistic::Value),
        n_images: 2,
        pass_rate: 1.0,
        pooling: fairness::POOLING.to_string(),
        config: AuditConfig::new(GroupingAttribute::Sex),
    })
}

fn main() -> segfair::Result<()> {
    let reports = vec![
        row("Baseline", 0.836, 0.813)?,
        row("Balanced", 0.804, 0.765)?,
        row("Stratified", 0.714, 0.716)?,
        row("Group-specific", 0.742, 0.793)?,
    ];
    for format in [ReportFormat::Markdown, ReportFormat::Csv] {
        println!("{}", fairness::render_table(&reports, format)?);
    }
    print!("{}", fairness::render_report(&reports[0], ReportFormat::Json));
    Ok(())
}
