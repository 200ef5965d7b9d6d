//! Command-line interface: dataset validation, frame extraction, the
//! attack campaign, judging, metrics, and report emission, plus a
//! `full-run` that chains them.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 campaign
//! transport-failure fraction above the manifest threshold, 64 usage
//! error.

use std::collections::BTreeSet;
use std::error::Error;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::campaign::{
    latest_outcomes, load_journal, outcomes_journal_path, run_campaign, snapshot_path,
    verdicts_journal_path, AttackOutcome, Journal, RunManifest, RunSnapshot,
};
use crate::dataset;
use crate::gateway::build_transport;
use crate::judge::{judge_outcomes, JudgeVerdict};
use crate::media::FrameExtractor;
use crate::report::{build_summary, emit_report, render_markdown, ReportFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Expected statistics of the full published dataset, checked by
/// `validate --expect-svma`.
mod expected {
    pub const FRACTION_INAPPROPRIATE: f64 = 0.549;
    pub const FRACTION_TOLERANCE: f64 = 0.001;
    pub const MEAN_ADV_VIDEO: f64 = 660.64;
    pub const MEAN_ADV_AUDIO: f64 = 680.75;
    pub const MEAN_ADV_PERCEPTION: f64 = 618.14;
    pub const MEAN_TOLERANCE: f64 = 0.5;
}

#[derive(Parser)]
#[command(
    name = "svma-harness",
    about = "Batch red-teaming harness for two-stage tri-modal attacks on \
             multimodal content-appropriateness moderators",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    /// Path to the JSON run manifest.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct RunFlags {
    /// Continue an existing journal instead of refusing to overwrite it.
    #[arg(long)]
    resume: bool,
    /// Acknowledge a non-deterministic generation config
    /// (temperature/top-p/top-k differing from 0/1/1).
    #[arg(long)]
    non_deterministic: bool,
}

#[derive(Args)]
struct FormatArg {
    /// Report formats to emit (markdown, csv, json). Default: all.
    #[arg(long = "format", value_name = "FORMAT")]
    formats: Vec<ReportFormat>,
}

impl FormatArg {
    fn resolve(&self) -> Vec<ReportFormat> {
        if self.formats.is_empty() {
            ReportFormat::ALL.to_vec()
        } else {
            self.formats.clone()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset file and print its statistics.
    Validate {
        /// Path to the JSON Lines dataset.
        dataset: PathBuf,
        /// Additionally check the statistics expected of the full
        /// published dataset (class split and adversarial-text lengths).
        #[arg(long)]
        expect_svma: bool,
    },
    /// Extract and cache keyframes for every dataset record.
    Frames {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Run the attack campaign (stage 1 + stage 2) over the manifest
    /// cross-product.
    Attack {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score journaled outcomes with the judge endpoint.
    Judge {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Compute metrics from the journals and print the summary.
    Metrics {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Emit report files from the journals.
    Report {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        formats: FormatArg,
    },
    /// Run attack, judge, metrics, and report in sequence.
    FullRun {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        flags: RunFlags,
        #[command(flatten)]
        formats: FormatArg,
    },
}

impl clap::builder::ValueParserFactory for ReportFormat {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<ReportFormat>())
    }
}

pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("info"),
    )
    .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Box<dyn Error>> {
    match command {
        Command::Validate { dataset, expect_svma } => cmd_validate(&dataset, expect_svma),
        Command::Frames { manifest } => cmd_frames(&RunManifest::load(manifest.manifest)?),
        Command::Attack { manifest, flags } => {
            cmd_attack(&RunManifest::load(manifest.manifest)?, &flags)
        }
        Command::Judge { manifest } => cmd_judge(&RunManifest::load(manifest.manifest)?),
        Command::Metrics { manifest } => cmd_metrics(&RunManifest::load(manifest.manifest)?),
        Command::Report { manifest, formats } => {
            cmd_report(&RunManifest::load(manifest.manifest)?, &formats.resolve())
        }
        Command::FullRun { manifest, flags, formats } => {
            let manifest = RunManifest::load(manifest.manifest)?;
            let attack_code = cmd_attack(&manifest, &flags)?;
            cmd_judge(&manifest)?;
            cmd_metrics(&manifest)?;
            cmd_report(&manifest, &formats.resolve())?;
            Ok(attack_code)
        }
    }
}

fn cmd_validate(path: &PathBuf, expect_svma: bool) -> Result<i32, Box<dyn Error>> {
    let content = std::fs::read_to_string(path)?;
    let records = match dataset::parse_dataset(&content) {
        Ok(records) => records,
        Err(e) => {
            eprintln!("invalid dataset: {e}");
            for violation in dataset::scan_violations(&content, 10) {
                eprintln!("  {violation}");
            }
            return Ok(EXIT_FAILURE);
        }
    };
    let stats = dataset::dataset_stats(&records)?;
    println!("records: {}", stats.record_count);
    println!(
        "class split: {:.4} inappropriate (label 0) / {:.4} appropriate (label 1)",
        stats.fraction_inappropriate, stats.fraction_appropriate
    );
    let (video, audio, perception) = stats.mean_adv_lengths;
    println!(
        "mean adversarial text length (chars): video {video:.2}, audio {audio:.2}, \
         perception {perception:.2}"
    );

    if expect_svma {
        let mut failures = Vec::new();
        let mut check = |name: &str, actual: f64, expected: f64, tolerance: f64| {
            if (actual - expected).abs() > tolerance {
                failures.push(format!(
                    "{name}: got {actual:.4}, expected {expected} ± {tolerance}"
                ));
            }
        };
        check(
            "fraction inappropriate",
            stats.fraction_inappropriate,
            expected::FRACTION_INAPPROPRIATE,
            expected::FRACTION_TOLERANCE,
        );
        check("mean adv video length", video, expected::MEAN_ADV_VIDEO, expected::MEAN_TOLERANCE);
        check("mean adv audio length", audio, expected::MEAN_ADV_AUDIO, expected::MEAN_TOLERANCE);
        check(
            "mean adv perception length",
            perception,
            expected::MEAN_ADV_PERCEPTION,
            expected::MEAN_TOLERANCE,
        );
        if !failures.is_empty() {
            for failure in &failures {
                eprintln!("expectation failed: {failure}");
            }
            return Ok(EXIT_FAILURE);
        }
        println!("published-dataset expectations met");
    }
    Ok(EXIT_OK)
}

fn cmd_frames(manifest: &RunManifest) -> Result<i32, Box<dyn Error>> {
    let records = dataset::load_dataset(&manifest.dataset)?;
    let extractor = FrameExtractor::new(manifest.extractor.clone(), &manifest.cache_dir);
    let mut failures = 0usize;
    let mut frames = 0usize;
    for record in &records {
        match extractor.frames_for_record(record, manifest.k) {
            Ok(set) => frames += set.frames.len(),
            Err(e) => {
                eprintln!("{}: {e}", record.id);
                failures += 1;
            }
        }
    }
    println!(
        "extracted {frames} frames for {} records ({failures} failures)",
        records.len() - failures
    );
    Ok(if failures == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_attack(manifest: &RunManifest, flags: &RunFlags) -> Result<i32, Box<dyn Error>> {
    let stats = run_campaign(manifest, flags.resume, flags.non_deterministic)?;
    println!(
        "campaign finished: {} cells ({} executed, {} from journal), \
         {} transport failures, {} refusals, {} unparseable",
        stats.total_cells,
        stats.executed,
        stats.skipped_from_journal,
        stats.transport_failures,
        stats.refusals,
        stats.unparseable
    );
    if stats.failure_fraction() > manifest.max_failure_fraction {
        eprintln!(
            "transport-failure fraction {:.3} exceeds threshold {:.3}",
            stats.failure_fraction(),
            manifest.max_failure_fraction
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_judge(manifest: &RunManifest) -> Result<i32, Box<dyn Error>> {
    let endpoint = match &manifest.judge_endpoint {
        Some(endpoint) => endpoint.clone(),
        None => {
            log::warn!("no judge_endpoint in manifest; skipping judging");
            return Ok(EXIT_OK);
        }
    };
    let records = dataset::load_dataset(&manifest.dataset)?;
    let outcomes = latest_outcomes(load_journal(outcomes_journal_path(manifest))?);

    let verdicts_path = verdicts_journal_path(manifest);
    let already: BTreeSet<_> = if verdicts_path.exists() {
        load_journal::<JudgeVerdict>(&verdicts_path)?
            .into_iter()
            .map(|v| v.outcome)
            .collect()
    } else {
        BTreeSet::new()
    };
    let todo: Vec<AttackOutcome> = outcomes
        .into_iter()
        .filter(|o| !already.contains(&o.key()))
        .collect();

    let mock_context = crate::gateway::transport::MockContext::from_records(&records);
    let transport = build_transport(&endpoint, Some(mock_context))?;
    let cache = crate::gateway::cache::ResponseCache::new(manifest.cache_dir.join("responses"));
    let gateway = crate::gateway::Gateway::new(
        endpoint,
        transport,
        Some(cache),
        std::sync::Arc::new(crate::gateway::SystemClock),
    )?;
    let templates = crate::templates::TemplateSet::load_or_embedded(
        manifest.template_dir.as_deref(),
    )?;
    let config = manifest.generation_config().with_max_tokens(512);

    let (verdicts, stats) = judge_outcomes(&todo, &gateway, &config, &templates);
    let journal = Journal::open(&verdicts_path)?;
    for verdict in &verdicts {
        journal.append(verdict)?;
    }
    println!(
        "judged {} outcomes ({} skipped without rationale, {} parse failures, \
         {} transport failures, {} previously judged)",
        stats.judged,
        stats.skipped_no_rationale,
        stats.parse_failures,
        stats.transport_failures,
        already.len()
    );
    Ok(EXIT_OK)
}

type SummaryInputs = (RunSnapshot, Vec<AttackOutcome>, Vec<JudgeVerdict>);

fn load_summary_inputs(manifest: &RunManifest) -> Result<SummaryInputs, Box<dyn Error>> {
    let snapshot_text = std::fs::read_to_string(snapshot_path(manifest))?;
    let snapshot: RunSnapshot = serde_json::from_str(&snapshot_text)?;
    let outcomes = latest_outcomes(load_journal(outcomes_journal_path(manifest))?);
    let verdicts_path = verdicts_journal_path(manifest);
    let verdicts: Vec<JudgeVerdict> = if verdicts_path.exists() {
        load_journal(&verdicts_path)?
    } else {
        Vec::new()
    };
    Ok((snapshot, outcomes, verdicts))
}

fn cmd_metrics(manifest: &RunManifest) -> Result<i32, Box<dyn Error>> {
    let (snapshot, outcomes, verdicts) = load_summary_inputs(manifest)?;
    let summary = build_summary(snapshot, &outcomes, &verdicts, &manifest.model_groups);
    print!("{}", render_markdown(&summary));
    Ok(EXIT_OK)
}

fn cmd_report(manifest: &RunManifest, formats: &[ReportFormat]) -> Result<i32, Box<dyn Error>> {
    let (snapshot, outcomes, verdicts) = load_summary_inputs(manifest)?;
    let summary = build_summary(snapshot, &outcomes, &verdicts, &manifest.model_groups);
    let written = emit_report(&summary, formats, &manifest.out_dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}
