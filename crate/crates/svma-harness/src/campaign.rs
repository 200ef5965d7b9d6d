//! Two-step attack execution over the (record × endpoint × mode)
//! cross-product, with an append-only outcome journal, resumability,
//! and bounded worker parallelism.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack_prompts::{build_stage1, build_stage2, parse_stage2_label, AttackMode, LabelParse};
use crate::dataset::{self, SvmaRecord};
use crate::gateway::{
    build_transport, cache::ResponseCache, Clock, Gateway, GatewayError, GenerationConfig,
    ModelEndpoint, ReplyStatus, SystemClock, Usage,
};
use crate::media::{ExtractorConfig, FrameExtractor, FrameSet, DEFAULT_KEYFRAMES};
use crate::messages::canonical_form;
use crate::templates::{TemplateSet, TemplateError};

pub const STAGE2_REASK_BUDGET: u32 = 2;
pub const DEFAULT_STAGE2_MAX_TOKENS: u32 = 16;

/// Run manifest: everything a campaign needs, checked into version
/// control alongside results. Credentials stay in environment
/// variables; the manifest only names them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<AttackMode>,
    pub endpoints: Vec<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_endpoint: Option<ModelEndpoint>,
    #[serde(default)]
    pub generation: Option<GenerationConfig>,
    #[serde(default = "default_stage2_tokens")]
    pub stage2_max_tokens: u32,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    /// Named model groupings for subgroup agreement statistics.
    #[serde(default)]
    pub model_groups: BTreeMap<String, Vec<String>>,
    /// Fraction of transport-failed outcomes above which the CLI exits
    /// with the partial-failure code.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_k() -> usize {
    DEFAULT_KEYFRAMES
}
fn default_parallelism() -> usize {
    4
}
fn default_modes() -> Vec<AttackMode> {
    AttackMode::all_attack_modes().to_vec()
}
fn default_stage2_tokens() -> u32 {
    DEFAULT_STAGE2_MAX_TOKENS
}
fn default_failure_fraction() -> f64 {
    0.25
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CampaignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| CampaignError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.dataset = resolve(base, &manifest.dataset);
        manifest.out_dir = resolve(base, &manifest.out_dir);
        manifest.cache_dir = resolve(base, &manifest.cache_dir);
        manifest.template_dir = manifest.template_dir.as_ref().map(|d| resolve(base, d));
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.endpoints.is_empty() {
            return Err(CampaignError::Manifest("no endpoints configured".into()));
        }
        if self.modes.is_empty() {
            return Err(CampaignError::Manifest("no modes configured".into()));
        }
        if self.k == 0 {
            return Err(CampaignError::Manifest("k must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(CampaignError::Manifest("parallelism must be positive".into()));
        }
        let mut names = HashSet::new();
        for endpoint in &self.endpoints {
            endpoint.validate().map_err(CampaignError::Gateway)?;
            if !names.insert(&endpoint.name) {
                return Err(CampaignError::Manifest(format!(
                    "duplicate endpoint name `{}`",
                    endpoint.name
                )));
            }
        }
        Ok(())
    }

    pub fn generation_config(&self) -> GenerationConfig {
        self.generation.clone().unwrap_or_default()
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    /// Stage 2 produced a usable label; `success` is meaningful.
    Predicted,
    /// Stage 1 was refused on safety grounds; counted as attack failure.
    Refusal,
    /// Stage 2 never produced a parseable verdict; counted as failure.
    Unparseable,
    /// Infrastructure failure; excluded from metric denominators and
    /// flagged for re-run.
    TransportFailure,
}

/// One (record, model, mode) trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub record_id: String,
    pub model: String,
    pub mode: AttackMode,
    pub status: OutcomeStatus,
    pub ground_truth: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<u8>,
    /// Attack success: defined as label mismatch; false whenever no
    /// label was produced.
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_raw: Option<String>,
    /// Canonical form of the final stage-2 request, persisted so the
    /// two-step separation can be audited after the fact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_request: Option<String>,
    pub stage2_attempts: u32,
    pub template_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_unix_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_unix_ms: Option<u64>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
}

impl AttackOutcome {
    pub fn key(&self) -> OutcomeKey {
        OutcomeKey {
            record_id: self.record_id.clone(),
            model: self.model.clone(),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomeKey {
    pub record_id: String,
    pub model: String,
    pub mode: AttackMode,
}

/// Provenance snapshot written next to the journals. Resuming against
/// different inputs is a hard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub dataset_hash: String,
    pub template_hash: String,
    pub k: usize,
    pub modes: Vec<AttackMode>,
    pub endpoint_names: Vec<String>,
    pub generation: GenerationConfig,
    pub stage2_max_tokens: u32,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("journal line {line}: {detail}")]
    Journal { line: usize, detail: String },
    #[error(
        "resume mismatch: {field} changed since this run directory was created \
         (was {recorded}, now {current})"
    )]
    ResumeMismatch {
        field: &'static str,
        recorded: String,
        current: String,
    },
    #[error("output directory already has a journal at {0}; pass --resume to continue it")]
    JournalExists(String),
    #[error(
        "generation config is non-deterministic (temperature/top-p/top-k differ from 0/1/1); \
         pass --non-deterministic to acknowledge"
    )]
    NonDeterministic,
}

/// Append-only JSON Lines journal with atomic line appends.
pub struct Journal {
    path: PathBuf,
    file: Mutex<fs::File>,
}

impl Journal {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CampaignError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CampaignError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| CampaignError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Journal {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn append<T: Serialize>(&self, entry: &T) -> Result<(), CampaignError> {
        let mut line = serde_json::to_vec(entry).expect("journal entry serializes");
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&line).map_err(|source| CampaignError::Io {
            path: self.path.display().to_string(),
            source,
        })?;
        file.flush().map_err(|source| CampaignError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

/// Re-parse a JSON Lines journal.
pub fn load_journal<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, CampaignError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(line).map_err(|e| CampaignError::Journal {
            line: idx + 1,
            detail: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Shared context for attack execution.
pub struct AttackContext {
    pub templates: TemplateSet,
    pub extractor: FrameExtractor,
    pub k: usize,
    pub stage1_config: GenerationConfig,
    pub stage2_config: GenerationConfig,
    frame_memo: Mutex<HashMap<String, Arc<FrameSet>>>,
}

impl AttackContext {
    pub fn new(
        templates: TemplateSet,
        extractor: FrameExtractor,
        k: usize,
        generation: GenerationConfig,
        stage2_max_tokens: u32,
    ) -> Self {
        let stage2_config = generation.clone().with_max_tokens(stage2_max_tokens);
        AttackContext {
            templates,
            extractor,
            k,
            stage1_config: generation,
            stage2_config,
            frame_memo: Mutex::new(HashMap::new()),
        }
    }

    fn frames(&self, record: &SvmaRecord) -> Result<Arc<FrameSet>, crate::media::MediaError> {
        if let Some(frames) = self.frame_memo.lock().unwrap().get(&record.id) {
            return Ok(Arc::clone(frames));
        }
        let frames = Arc::new(self.extractor.frames_for_record(record, self.k)?);
        self.frame_memo
            .lock()
            .unwrap()
            .insert(record.id.clone(), Arc::clone(&frames));
        Ok(frames)
    }
}

/// Execute the two-step attack for one (record, endpoint, mode) cell.
/// Never returns an error: every failure becomes an outcome.
pub fn run_attack(
    record: &SvmaRecord,
    gateway: &Gateway,
    mode: AttackMode,
    ctx: &AttackContext,
) -> AttackOutcome {
    let base = AttackOutcome {
        record_id: record.id.clone(),
        model: gateway.endpoint().name.clone(),
        mode,
        status: OutcomeStatus::TransportFailure,
        ground_truth: record.label,
        predicted_label: None,
        success: false,
        stage1_rationale: None,
        stage2_raw: None,
        stage2_request: None,
        stage2_attempts: 0,
        template_hash: ctx.templates.hash().to_string(),
        stage1_unix_ms: None,
        stage2_unix_ms: None,
        usage: Usage::default(),
        failure_detail: None,
    };

    let frames = match ctx.frames(record) {
        Ok(frames) => frames,
        Err(e) => {
            return AttackOutcome {
                failure_detail: Some(format!("frame preparation failed: {e}")),
                ..base
            }
        }
    };

    let stage1 = build_stage1(record, &frames, mode, &ctx.templates);
    let (reply1, _) = match gateway.cached_chat(&stage1, &ctx.stage1_config) {
        Ok(result) => result,
        Err(e) => {
            return AttackOutcome {
                failure_detail: Some(format!("stage 1: {e}")),
                ..base
            }
        }
    };
    let mut usage = merge_usage(Usage::default(), reply1.usage.as_ref());
    if reply1.status == ReplyStatus::Refused {
        return AttackOutcome {
            status: OutcomeStatus::Refusal,
            stage1_unix_ms: Some(reply1.created_unix_ms),
            failure_detail: Some(reply1.text),
            usage,
            ..base
        };
    }
    let rationale = reply1.text;

    let mut last_raw = None;
    let mut last_request = None;
    let mut last_ts = None;
    for attempt in 0..=STAGE2_REASK_BUDGET {
        let stage2 = build_stage2(&rationale, attempt, &ctx.templates);
        let (reply2, _) = match gateway.cached_chat(&stage2, &ctx.stage2_config) {
            Ok(result) => result,
            Err(e) => {
                return AttackOutcome {
                    stage1_rationale: Some(rationale),
                    stage1_unix_ms: Some(reply1.created_unix_ms),
                    stage2_attempts: attempt,
                    usage,
                    failure_detail: Some(format!("stage 2: {e}")),
                    ..base
                }
            }
        };
        usage = merge_usage(usage, reply2.usage.as_ref());
        last_request = Some(canonical_form(&stage2));
        last_ts = Some(reply2.created_unix_ms);
        if reply2.status == ReplyStatus::Refused {
            return AttackOutcome {
                status: OutcomeStatus::Refusal,
                stage1_rationale: Some(rationale),
                stage1_unix_ms: Some(reply1.created_unix_ms),
                stage2_raw: Some(reply2.text.clone()),
                stage2_request: last_request,
                stage2_unix_ms: last_ts,
                stage2_attempts: attempt + 1,
                usage,
                failure_detail: Some("stage 2 refused".into()),
                ..base
            };
        }
        match parse_stage2_label(&reply2.text) {
            LabelParse::Label(label) => {
                return AttackOutcome {
                    status: OutcomeStatus::Predicted,
                    predicted_label: Some(label),
                    success: label != record.label,
                    stage1_rationale: Some(rationale),
                    stage1_unix_ms: Some(reply1.created_unix_ms),
                    stage2_raw: Some(reply2.text),
                    stage2_request: last_request,
                    stage2_unix_ms: last_ts,
                    stage2_attempts: attempt + 1,
                    usage,
                    ..base
                };
            }
            LabelParse::Unparseable(_) => {
                last_raw = Some(reply2.text);
            }
        }
    }
    AttackOutcome {
        status: OutcomeStatus::Unparseable,
        stage1_rationale: Some(rationale),
        stage1_unix_ms: Some(reply1.created_unix_ms),
        stage2_raw: last_raw,
        stage2_request: last_request,
        stage2_unix_ms: last_ts,
        stage2_attempts: STAGE2_REASK_BUDGET + 1,
        usage,
        ..base
    }
}

fn merge_usage(mut acc: Usage, usage: Option<&Usage>) -> Usage {
    if let Some(u) = usage {
        acc.prompt_tokens = match (acc.prompt_tokens, u.prompt_tokens) {
            (Some(a), Some(b)) => Some(a + b),
            (a, b) => a.or(b),
        };
        acc.completion_tokens = match (acc.completion_tokens, u.completion_tokens) {
            (Some(a), Some(b)) => Some(a + b),
            (a, b) => a.or(b),
        };
    }
    acc
}

/// Summary counters for a finished campaign pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignRunStats {
    pub total_cells: usize,
    pub executed: usize,
    pub skipped_from_journal: usize,
    pub transport_failures: usize,
    pub refusals: usize,
    pub unparseable: usize,
}

impl CampaignRunStats {
    pub fn failure_fraction(&self) -> f64 {
        if self.total_cells == 0 {
            0.0
        } else {
            self.transport_failures as f64 / self.total_cells as f64
        }
    }
}

/// Collapse journal history to the latest entry per (record, model,
/// mode) cell, in key order. Resumed runs append re-run outcomes rather
/// than rewriting the journal, so consumers must take the last word.
pub fn latest_outcomes(outcomes: Vec<AttackOutcome>) -> Vec<AttackOutcome> {
    let mut latest: BTreeMap<OutcomeKey, AttackOutcome> = BTreeMap::new();
    for outcome in outcomes {
        latest.insert(outcome.key(), outcome);
    }
    latest.into_values().collect()
}

pub fn outcomes_journal_path(manifest: &RunManifest) -> PathBuf {
    manifest.out_dir.join("outcomes.jsonl")
}

pub fn verdicts_journal_path(manifest: &RunManifest) -> PathBuf {
    manifest.out_dir.join("verdicts.jsonl")
}

pub fn snapshot_path(manifest: &RunManifest) -> PathBuf {
    manifest.out_dir.join("run_manifest.json")
}

/// Build the provenance snapshot for a manifest.
pub fn build_snapshot(manifest: &RunManifest) -> Result<(RunSnapshot, TemplateSet), CampaignError> {
    let templates = TemplateSet::load_or_embedded(manifest.template_dir.as_deref())?;
    let snapshot = RunSnapshot {
        dataset_hash: dataset::dataset_hash(&manifest.dataset)?,
        template_hash: templates.hash().to_string(),
        k: manifest.k,
        modes: manifest.modes.clone(),
        endpoint_names: manifest.endpoints.iter().map(|e| e.name.clone()).collect(),
        generation: manifest.generation_config(),
        stage2_max_tokens: manifest.stage2_max_tokens,
    };
    Ok((snapshot, templates))
}

fn check_snapshot(manifest: &RunManifest, snapshot: &RunSnapshot) -> Result<(), CampaignError> {
    let path = snapshot_path(manifest);
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(&path).map_err(|source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let recorded: RunSnapshot =
        serde_json::from_str(&text).map_err(|e| CampaignError::Manifest(e.to_string()))?;
    for (field, recorded_value, current_value) in [
        ("dataset_hash", &recorded.dataset_hash, &snapshot.dataset_hash),
        ("template_hash", &recorded.template_hash, &snapshot.template_hash),
    ] {
        if recorded_value != current_value {
            return Err(CampaignError::ResumeMismatch {
                field,
                recorded: recorded_value.clone(),
                current: current_value.clone(),
            });
        }
    }
    Ok(())
}

/// Build one gateway per endpoint, with the response cache and mock
/// ground-truth context wired in.
pub fn build_gateways(
    manifest: &RunManifest,
    records: &[SvmaRecord],
    clock: Arc<dyn Clock>,
) -> Result<Vec<Arc<Gateway>>, CampaignError> {
    let mock_context = crate::gateway::transport::MockContext::from_records(records);
    manifest
        .endpoints
        .iter()
        .map(|endpoint| {
            let transport = build_transport(endpoint, Some(mock_context.clone()))?;
            let cache = ResponseCache::new(manifest.cache_dir.join("responses"));
            Ok(Arc::new(Gateway::new(
                endpoint.clone(),
                transport,
                Some(cache),
                Arc::clone(&clock),
            )?))
        })
        .collect()
}

/// Run the full campaign cross-product. Already-journaled cells are
/// skipped; new outcomes are appended in deterministic task order
/// regardless of worker count.
pub fn run_campaign(
    manifest: &RunManifest,
    resume: bool,
    allow_non_deterministic: bool,
) -> Result<CampaignRunStats, CampaignError> {
    let generation = manifest.generation_config();
    if !generation.is_deterministic() && !allow_non_deterministic {
        return Err(CampaignError::NonDeterministic);
    }
    let records = dataset::load_dataset(&manifest.dataset)?;
    let (snapshot, templates) = build_snapshot(manifest)?;
    check_snapshot(manifest, &snapshot)?;

    let journal_path = outcomes_journal_path(manifest);
    let mut done: HashSet<OutcomeKey> = HashSet::new();
    if journal_path.exists() {
        let existing: Vec<AttackOutcome> = load_journal(&journal_path)?;
        if !existing.is_empty() && !resume {
            return Err(CampaignError::JournalExists(
                journal_path.display().to_string(),
            ));
        }
        // Transport failures are re-run on resume.
        done.extend(
            existing
                .iter()
                .filter(|o| o.status != OutcomeStatus::TransportFailure)
                .map(|o| o.key()),
        );
    }

    fs::create_dir_all(&manifest.out_dir).map_err(|source| CampaignError::Io {
        path: manifest.out_dir.display().to_string(),
        source,
    })?;
    let snapshot_file = snapshot_path(manifest);
    fs::write(
        &snapshot_file,
        serde_json::to_vec_pretty(&snapshot).expect("snapshot serializes"),
    )
    .map_err(|source| CampaignError::Io {
        path: snapshot_file.display().to_string(),
        source,
    })?;

    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let gateways = build_gateways(manifest, &records, clock)?;
    let extractor = FrameExtractor::new(manifest.extractor.clone(), &manifest.cache_dir);
    let ctx = AttackContext::new(
        templates,
        extractor,
        manifest.k,
        generation,
        manifest.stage2_max_tokens,
    );

    // Deterministic task order: record-major, then endpoint, then mode.
    let mut ordered: Vec<(usize, usize, AttackMode)> = Vec::new();
    let mut skipped = 0usize;
    let mut total_cells = 0usize;
    for (record_idx, record) in records.iter().enumerate() {
        for (gateway_idx, gateway) in gateways.iter().enumerate() {
            for mode in &manifest.modes {
                total_cells += 1;
                let key = OutcomeKey {
                    record_id: record.id.clone(),
                    model: gateway.endpoint().name.clone(),
                    mode: *mode,
                };
                if done.contains(&key) {
                    skipped += 1;
                } else {
                    ordered.push((record_idx, gateway_idx, *mode));
                }
            }
        }
    }

    let journal = Journal::open(&journal_path)?;
    let queue: Mutex<VecDeque<(usize, usize, usize, AttackMode)>> = Mutex::new(
        ordered
            .iter()
            .enumerate()
            .map(|(i, &(r, g, m))| (i, r, g, m))
            .collect(),
    );
    // Completed outcomes are written strictly in task order so journal
    // bytes do not depend on worker scheduling.
    let pending: Mutex<BTreeMap<usize, AttackOutcome>> = Mutex::new(BTreeMap::new());
    let next_write: Mutex<usize> = Mutex::new(0);
    let stats: Mutex<CampaignRunStats> = Mutex::new(CampaignRunStats {
        total_cells,
        executed: 0,
        skipped_from_journal: skipped,
        transport_failures: 0,
        refusals: 0,
        unparseable: 0,
    });
    let write_error: Mutex<Option<CampaignError>> = Mutex::new(None);

    let workers = manifest.parallelism.min(ordered.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().pop_front();
                let (idx, record_idx, gateway_idx, mode) = match task {
                    Some(t) => t,
                    None => break,
                };
                let outcome = run_attack(&records[record_idx], &gateways[gateway_idx], mode, &ctx);
                log::info!(
                    "{} × {} × {} → {:?}{}",
                    outcome.record_id,
                    outcome.model,
                    outcome.mode.label(),
                    outcome.status,
                    if outcome.success { " (attack succeeded)" } else { "" }
                );
                {
                    let mut s = stats.lock().unwrap();
                    s.executed += 1;
                    match outcome.status {
                        OutcomeStatus::TransportFailure => s.transport_failures += 1,
                        OutcomeStatus::Refusal => s.refusals += 1,
                        OutcomeStatus::Unparseable => s.unparseable += 1,
                        OutcomeStatus::Predicted => {}
                    }
                }
                let mut pending_map = pending.lock().unwrap();
                pending_map.insert(idx, outcome);
                let mut next = next_write.lock().unwrap();
                while let Some(outcome) = pending_map.remove(&*next) {
                    if let Err(e) = journal.append(&outcome) {
                        *write_error.lock().unwrap() = Some(e);
                        return;
                    }
                    *next += 1;
                }
            });
        }
    });

    if let Some(e) = write_error.lock().unwrap().take() {
        return Err(e);
    }
    Ok(stats.into_inner().unwrap())
}
