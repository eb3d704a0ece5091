//! The `segfair` command line.
//!
//! Exit codes: 0 on success, 1 on a domain error (missing mask, bad
//! metadata, infeasible split or plan), 2 on a usage error. Usage errors are
//! detected before any file is read or written. `SEGFAIR_THREADS` caps the
//! number of worker threads.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::fairness::{self, ReportFormat};
use crate::ingest::{self, MaskFormat};
use crate::metrics::{self, Annotation};
use crate::model::{AuditConfig, GroupKey, GroupingAttribute, Split};
use crate::sampling::{self, SamplerPlan, SplitFractions};
use crate::synth::{self, SynthGroup, SynthSpec};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "SEGFAIR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "segfair", version, about = "Fairness audits and sampler plans for segmentation cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against ground truth and report per-group fairness.
    Audit(AuditArgs),
    /// Write a sampler plan for one training configuration, or check one.
    Plan(PlanArgs),
    /// Assign a stratified 70/15/15 train/val/test split.
    Split(SplitArgs),
    /// Mean pairwise IoU/Dice between annotators.
    Agree(AgreeArgs),
    /// Generate a synthetic cohort with per-group target IoU.
    Synth(SynthArgs),
    /// Combine saved JSON reports into one table, or tabulate a cohort.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupArg {
    Sex,
    Race,
    Sexrace,
}

impl From<GroupArg> for GroupingAttribute {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Sex => GroupingAttribute::Sex,
            GroupArg::Race => GroupingAttribute::Race,
            GroupArg::Sexrace => GroupingAttribute::SexByRace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttrArg {
    Sex,
    Race,
}

impl From<AttrArg> for GroupingAttribute {
    fn from(a: AttrArg) -> Self {
        match a {
            AttrArg::Sex => GroupingAttribute::Sex,
            AttrArg::Race => GroupingAttribute::Race,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Md,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Md => ReportFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Baseline,
    Balanced,
    Stratified,
    Group,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskFormatArg {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub meta: PathBuf,
    #[arg(long, value_enum)]
    pub group: GroupArg,
    #[arg(long, default_value_t = AuditConfig::DEFAULT_IOU_PASS_THRESHOLD)]
    pub tau: f64,
    #[arg(long, value_enum, default_value = "md")]
    pub format: FormatArg,
    #[arg(long, value_name = "NAME", default_value = "model")]
    pub model_name: String,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_name = "CSV")]
    pub meta: PathBuf,
    #[arg(long, value_enum, required_unless_present = "verify")]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum, required_unless_present = "verify")]
    pub attr: Option<AttrArg>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, required_unless_present = "verify")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE", required_unless_present = "verify")]
    pub out: Option<PathBuf>,
    /// Split CSV (`id,split`) to use instead of the metadata's split column.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    /// Check an existing plan file against the cohort instead of writing one.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["strategy", "out"])]
    pub verify: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "CSV")]
    pub meta: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// Directory of `<annotator>__<image>.png|pgm` files.
    #[arg(long, value_name = "DIR")]
    pub masks: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub group: GroupArg,
    /// Target mean IoU for one group, e.g. `Male=0.85` or `F|BAA=0.7`.
    #[arg(long = "target", value_name = "LEVEL=IOU", required = true)]
    pub targets: Vec<String>,
    /// Images per group.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = synth::DEFAULT_IOU_TOLERANCE)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "png")]
    pub mask_format: MaskFormatArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `audit --format json`; repeat for more rows.
    #[arg(long = "input", value_name = "FILE", required_unless_present = "meta")]
    pub inputs: Vec<PathBuf>,
    /// Tabulate the cohort composition of a metadata CSV instead.
    #[arg(long, value_name = "CSV", conflicts_with = "inputs")]
    pub meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sexrace")]
    pub group: GroupArg,
    #[arg(long, value_enum, default_value = "md")]
    pub format: FormatArg,
}

/// Worker count from `SEGFAIR_THREADS`; 0 lets rayon use all logical cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 1;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| execute(cli.command, &mut buf));
    let _ = stdout.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn execute(command: Command, out: &mut Vec<u8>) -> Result<()> {
    match command {
        Command::Audit(a) => audit(a, out),
        Command::Plan(a) => plan(a, out),
        Command::Split(a) => split(a, out),
        Command::Agree(a) => agree(a, out),
        Command::Synth(a) => synth_cmd(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Other(format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::Other(format!("writing output: {e}")))
}

fn audit(args: AuditArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = AuditConfig::new(args.group.into()).with_threshold(args.tau)?;
    let table = ingest::load_metadata(&args.meta)?;
    let pairs = ingest::resolve_pairs(&table, &args.gt, &args.pred)?;
    let scored = fairness::score_cohort(&table, &pairs, &cfg)?;
    let report = fairness::build_report(&args.model_name, &scored, &cfg)?;
    emit(out, &fairness::render_report(&report, args.format.into()))
}

fn load_training_table(meta: &Path, split: Option<&Path>) -> Result<ingest::CohortTable> {
    let mut table = ingest::load_metadata(meta)?;
    if let Some(path) = split {
        let rows = sampling::read_split(path)?;
        let known: std::collections::HashSet<&str> = table.records.iter().map(|r| r.id.as_str()).collect();
        if let Some((id, _)) = rows.iter().find(|(id, _)| !known.contains(id.as_str())) {
            return Err(Error::Other(format!(
                "{}: id {id:?} is not in {}",
                path.display(),
                meta.display()
            )));
        }
        let map: std::collections::HashMap<&str, Split> = rows.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        for r in &mut table.records {
            r.split = map.get(r.id.as_str()).copied();
        }
    }
    if !table.has_splits() {
        return Err(Error::Other(format!(
            "{} has no split column; pass --split or run `segfair split` first",
            meta.display()
        )));
    }
    Ok(table)
}

fn write_summary(out: &mut dyn Write, summary: &sampling::PlanSummary, path: &Path, verb: &str) -> Result<()> {
    let counts: Vec<String> = summary
        .group_counts
        .iter()
        .map(|(g, n)| format!("{g}={n}"))
        .collect();
    emit(
        out,
        &format!(
            "{verb} {}: strategy {:?}, {} batches, {} items ({} distinct), group counts {}\n",
            path.display(),
            summary.strategy,
            summary.batches,
            summary.items,
            summary.distinct_ids,
            counts.join(" ")
        ),
    )
}

fn group_plan_path(out: &Path, label: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("plan");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("json");
    let label: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    out.with_file_name(format!("{stem}_{label}.{ext}"))
}

fn plan(args: PlanArgs, out: &mut dyn Write) -> Result<()> {
    let table = load_training_table(&args.meta, args.split.as_deref())?;
    let train = sampling::training_records(&table);

    if let Some(path) = &args.verify {
        let plan = sampling::read_plan(path)?;
        let summary = sampling::verify_plan(&plan, &train)?;
        return write_summary(out, &summary, path, "ok");
    }

    // clap guarantees these when --verify is absent.
    let (strategy, attr, seed, target) = match (args.strategy, args.attr, args.seed, args.out) {
        (Some(s), Some(a), Some(seed), Some(o)) => (s, GroupingAttribute::from(a), seed, o),
        _ => return Err(Error::Other("--strategy, --attr, --seed and --out are required".into())),
    };
    let plans: Vec<(PathBuf, SamplerPlan)> = match strategy {
        StrategyArg::Baseline => {
            let ids: Vec<String> = train.iter().map(|r| r.id.clone()).collect();
            let mut plan = sampling::baseline_plan(&ids, seed, args.batch_size)?;
            plan.attribute = Some(attr);
            vec![(target, plan)]
        }
        StrategyArg::Balanced => vec![(target, sampling::oversample_plan(&train, attr, seed, args.batch_size)?)],
        StrategyArg::Stratified => vec![(
            target,
            sampling::stratified_batch_plan(&train, attr, seed, args.batch_size)?,
        )],
        StrategyArg::Group => sampling::group_partition(&train, attr, seed, args.batch_size)?
            .into_iter()
            .map(|(label, plan)| (group_plan_path(&target, &label), plan))
            .collect(),
    };
    for (path, plan) in &plans {
        let summary = sampling::verify_plan(plan, &train)?;
        sampling::write_plan(plan, path)?;
        write_summary(out, &summary, path, "wrote")?;
    }
    Ok(())
}

fn split(args: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let table = ingest::load_metadata(&args.meta)?;
    let assignment = sampling::stratified_split(&table, args.seed, SplitFractions::DEFAULT)?;
    sampling::write_split(&args.out, &assignment.assignments)?;
    let mut text = format!("{:<32} {:>6} {:>6} {:>6} {:>6}\n", "stratum", "train", "val", "test", "total");
    for s in &assignment.strata {
        let [tr, va, te] = s.sizes;
        text.push_str(&format!(
            "{:<32} {tr:>6} {va:>6} {te:>6} {:>6}\n",
            s.stratum.value,
            s.total()
        ));
    }
    let [tr, va, te] = assignment.totals();
    text.push_str(&format!("{:<32} {tr:>6} {va:>6} {te:>6} {:>6}\n", "total", table.len()));
    text.push_str(&format!("wrote {}\n", args.out.display()));
    emit(out, &text)
}

/// Lists `<annotator>__<image>.png|pgm` files of `dir` in name order.
pub fn annotation_files(dir: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !(ext == "png" || ext == "pgm") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let (annotator, image) = stem
            .split_once("__")
            .filter(|(a, i)| !a.is_empty() && !i.is_empty())
            .ok_or_else(|| {
                Error::Other(format!(
                    "{}: expected <annotator>__<image>.{ext}",
                    path.display()
                ))
            })?;
        files.push((annotator.to_string(), image.to_string(), path));
    }
    files.sort();
    Ok(files)
}

fn agree(args: AgreeArgs, out: &mut dyn Write) -> Result<()> {
    let files = annotation_files(&args.masks)?;
    let loaded: Vec<std::result::Result<Annotation, ingest::IngestError>> = files
        .par_iter()
        .map(|(annotator, image, path)| {
            Ok(Annotation {
                annotator: annotator.clone(),
                image: image.clone(),
                mask: ingest::load_mask(path)?,
            })
        })
        .collect();
    let annotations = loaded.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    let agreement = metrics::pairwise_agreement(&annotations)?;
    emit(
        out,
        &format!(
            "{} annotators, {} shared images, {} pairwise comparisons\nIoU {:.3}, Dice {:.3}\n",
            agreement.annotators, agreement.images, agreement.cells, agreement.mean_iou, agreement.mean_dice
        ),
    )
}

/// Accepts a canonical level (`Female`, `Male|WhiteOrCaucasian`) or the
/// metadata codes (`F`, `M|WC`).
pub fn parse_level(attribute: GroupingAttribute, text: &str) -> Option<GroupKey> {
    if let Ok(key) = GroupKey::new(attribute, text) {
        return Some(key);
    }
    let expand = |part: &str| -> Option<&'static str> {
        crate::model::Sex::from_code(part)
            .map(|s| s.as_str())
            .or_else(|| crate::model::Race::from_code(part).map(|r| r.as_str()))
    };
    let expanded: Option<Vec<&str>> = text.split('|').map(expand).collect();
    GroupKey::new(attribute, expanded?.join("|")).ok()
}

fn synth_cmd(args: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let attribute = GroupingAttribute::from(args.group);
    let mut groups = Vec::new();
    for t in &args.targets {
        let (level, iou) = t
            .split_once('=')
            .ok_or_else(|| Error::Other(format!("--target {t:?}: expected LEVEL=IOU")))?;
        let key = parse_level(attribute, level.trim()).ok_or_else(|| {
            Error::Other(format!(
                "--target {t:?}: {level:?} is not a level of {attribute} (levels: {})",
                attribute.levels().join(", ")
            ))
        })?;
        let target_iou: f64 = iou
            .trim()
            .parse()
            .map_err(|_| Error::Other(format!("--target {t:?}: bad IoU {iou:?}")))?;
        groups.push(SynthGroup {
            key,
            count: args.count,
            target_iou,
        });
    }
    let mut spec = SynthSpec::new(groups, args.size, args.size, args.seed);
    spec.iou_tolerance = args.tol;
    spec.format = match args.mask_format {
        MaskFormatArg::Png => MaskFormat::Png,
        MaskFormatArg::Pgm => MaskFormat::Pgm,
    };
    let cohort = synth::generate_cohort(&spec, &args.out)?;
    let mut text = String::new();
    for ((key, measured), group) in cohort.measured.iter().zip(&spec.groups) {
        text.push_str(&format!(
            "{key}: {} images, target IoU {:.3}, measured {:.4}\n",
            group.count, group.target_iou, measured
        ));
    }
    text.push_str(&format!(
        "wrote {} ({} records), {}, {}\n",
        cohort.metadata_path.display(),
        cohort.table.len(),
        cohort.gt_dir.display(),
        cohort.pred_dir.display()
    ));
    emit(out, &text)
}

fn report(args: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let format = ReportFormat::from(args.format);
    if let Some(meta) = &args.meta {
        let table = ingest::load_metadata(meta)?;
        let dist = fairness::distribution(&table, args.group.into());
        let text = match format {
            ReportFormat::Markdown => dist.to_markdown(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string(&dist).map_err(|e| Error::Other(e.to_string()))?;
                s.push('\n');
                s
            }
            ReportFormat::Csv => {
                let mut s = String::from("group,patients,percent\n");
                for row in &dist.rows {
                    s.push_str(&format!("{},{},{:.1}\n", row.group.value, row.count, row.percent));
                }
                s
            }
        };
        return emit(out, &text);
    }
    let mut reports = Vec::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        reports.extend(fairness::parse_reports(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?);
    }
    emit(out, &fairness::render_table(&reports, format)?)
}
