//! Orchestrates the full pipeline per (browser, device version): EBI
//! selection, warm-up, target discovery, staging, attacks A1–A4, the
//! characterization probes, and adjudication, with repeated runs merged
//! by union.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ebi::{select_ebi, TieBreak};
use crate::forge::{forge, AttackId, AttackSpec, Followup, Staging, SYMLINK_SWAP_DELAY_MS};
use crate::manifest::{classify_exposure, default_engine_libs, infer_custom_engine, EngineGuess, ExposureClass};
use crate::receiver::{
    adjudicate, sha256_hex, AttackVerdict, BeaconStore, Evidence, Experiment, ExperimentRegistry,
    Outcome,
};
use crate::sandbox::{
    default_extensions, default_keywords, find_targets, load_profile, BrowserProfile,
    DeliveryResult, DeviceBackend, HttpTransport, Intent, Sandbox, SandboxError, TraceEvent, Zone,
};
use crate::version::Version;

#[derive(Debug, thiserror::Error)]
pub enum CommanderError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("merge error: {0}")]
    Merge(String),
    #[error("log error: {0}")]
    Log(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Remote origin fetched by A3 and the fixture body planted there.
pub const A3_REMOTE_ORIGIN: &str = "http://target.example/private/token.txt";
pub const A3_FIXTURE_BODY: &[u8] = b"cross-protocol-secret-6a21";

pub const VIEW_ACTION: &str = "android.intent.action.VIEW";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub device_versions: Vec<Version>,
    /// Virtual milliseconds a collection window stays open per request.
    pub timeout_ms: u64,
    pub runs: u32,
    pub key_id: String,
    pub receiver_base: String,
    pub tie_break: TieBreak,
    pub keywords: Vec<String>,
    pub extensions: Vec<String>,
    pub warm_up_sites: Vec<String>,
    /// Accept any non-empty beacon content instead of digest matching.
    pub receipt_only: bool,
    /// Run device-version workers concurrently.
    pub parallel_versions: bool,
    /// Mirror sandbox filesystems under this directory when set.
    pub state_dir: Option<PathBuf>,
}

pub fn default_versions() -> Vec<Version> {
    ["4.0", "4.3", "4.4"]
        .iter()
        .map(|v| v.parse().unwrap())
        .collect()
}

pub fn default_warm_up_sites() -> Vec<String> {
    [
        "https://mail.example.com",
        "https://bank.example.com",
        "https://social.example.com",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl RunConfig {
    pub fn new(corpus_dir: impl Into<PathBuf>, key_id: &str, receiver_base: &str) -> Self {
        RunConfig {
            corpus_dir: corpus_dir.into(),
            device_versions: default_versions(),
            timeout_ms: 12_000,
            runs: 3,
            key_id: key_id.to_string(),
            receiver_base: receiver_base.to_string(),
            tie_break: TieBreak::FirstDeclared,
            keywords: default_keywords(),
            extensions: default_extensions(),
            warm_up_sites: default_warm_up_sites(),
            receipt_only: false,
            parallel_versions: true,
            state_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), CommanderError> {
        if self.runs < 1 {
            return Err(CommanderError::Config("runs must be >= 1".into()));
        }
        if self.device_versions.is_empty() {
            return Err(CommanderError::Config("device_versions must be non-empty".into()));
        }
        if self.key_id.is_empty() {
            return Err(CommanderError::Config("key_id must be non-empty".into()));
        }
        Ok(())
    }

    /// Identity used to refuse merging records from different setups.
    /// The receiver address and state directory are deployment details,
    /// not experiment identity.
    pub fn config_id(&self) -> String {
        let versions: Vec<String> = self.device_versions.iter().map(|v| v.to_string()).collect();
        format!(
            "kid={};versions={};timeout={};tie={:?};kw={};ext={};receipt_only={}",
            self.key_id,
            versions.join(","),
            self.timeout_ms,
            self.tie_break,
            self.keywords.join(","),
            self.extensions.join(","),
            self.receipt_only,
        )
    }
}

/// Per (pkg, version) capability facts gathered before and during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityFacts {
    pub ebi: u32,
    pub ebi_component: Option<String>,
    pub exposure_class: ExposureClass,
    pub file_support_sd: Option<bool>,
    pub file_support_private: Option<bool>,
    pub js_in_file: Option<bool>,
    pub engine_guess: EngineGuess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageVersionResult {
    pub pkg: String,
    pub ver: String,
    pub facts: CapabilityFacts,
    /// One verdict per attack, in A1..A4 order.
    pub verdicts: Vec<AttackVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based; 0 marks a merged (union) record.
    pub run_index: u32,
    pub config_id: String,
    pub rows: Vec<PackageVersionResult>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// What one device-version worker produced before adjudication.
struct WorkerOut {
    ver: Version,
    facts: CapabilityFacts,
    a1: AttackVerdict,
    /// Attacks that demonstrably ran to a negative conclusion without a
    /// beacon (the mitigated-symlink case); NoResponse is downgraded to
    /// NotVulnerable for these.
    silent_negatives: Vec<AttackId>,
    warnings: Vec<String>,
}

/// Load every `*.json` profile in the corpus directory, sorted by
/// package name. Unparseable profiles become errors, not failures.
pub fn load_corpus(dir: &Path) -> Result<(Vec<BrowserProfile>, Vec<String>), CommanderError> {
    let mut profiles = Vec::new();
    let mut errors = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CommanderError::Corpus(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    paths.sort();
    for path in paths {
        match load_profile(&path) {
            Ok(p) => profiles.push(p),
            Err(e) => errors.push(format!("{}: {e}", path.display())),
        }
    }
    profiles.sort_by(|a, b| a.package.cmp(&b.package));
    Ok((profiles, errors))
}

/// Run the whole suite: `config.runs` independent passes over the corpus.
/// The receiver behind `registry`/`store` must already be serving at
/// `config.receiver_base`.
pub fn run_suite(
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    store: &Arc<BeaconStore>,
) -> Result<Vec<RunRecord>, CommanderError> {
    config.validate()?;
    let (profiles, corpus_errors) = load_corpus(&config.corpus_dir)?;
    let mut records = Vec::new();
    for run_index in 1..=config.runs {
        let mut record = run_once(config, registry, store, &profiles, run_index)?;
        record.errors.splice(0..0, corpus_errors.iter().cloned());
        records.push(record);
    }
    Ok(records)
}

fn run_once(
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    store: &Arc<BeaconStore>,
    profiles: &[BrowserProfile],
    run_index: u32,
) -> Result<RunRecord, CommanderError> {
    // Earlier runs' beacons must not vouch for this one.
    let offset = store.snapshot().len();
    let mut record = RunRecord {
        run_index,
        config_id: config.config_id(),
        rows: Vec::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    for profile in profiles {
        match run_package(config, registry, store, profile, run_index, offset) {
            Ok((rows, mut warnings)) => {
                record.rows.extend(rows);
                record.warnings.append(&mut warnings);
            }
            // Failure control: one broken app must not sink the suite.
            Err(e) => record.errors.push(format!("{}: {e}", profile.package)),
        }
    }
    Ok(record)
}

fn no_ebi_rows(profile: &BrowserProfile, config: &RunConfig) -> Vec<PackageVersionResult> {
    let engine_guess = infer_custom_engine(&profile.manifest, &default_engine_libs());
    config
        .device_versions
        .iter()
        .map(|ver| PackageVersionResult {
            pkg: profile.package.clone(),
            ver: ver.to_string(),
            facts: CapabilityFacts {
                ebi: 0,
                ebi_component: None,
                exposure_class: ExposureClass::NotExposed,
                file_support_sd: None,
                file_support_private: None,
                js_in_file: None,
                engine_guess: engine_guess.clone(),
            },
            verdicts: AttackId::ATTACKS
                .iter()
                .map(|attack| AttackVerdict {
                    pkg: profile.package.clone(),
                    attack: *attack,
                    ver: ver.to_string(),
                    outcome: Outcome::NoResponse,
                    evidence: None,
                })
                .collect(),
        })
        .collect()
}

fn run_package(
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    store: &Arc<BeaconStore>,
    profile: &BrowserProfile,
    run_index: u32,
    run_offset: usize,
) -> Result<(Vec<PackageVersionResult>, Vec<String>), CommanderError> {
    let selection = select_ebi(&profile.manifest, config.tie_break);
    let Some(component_name) = selection.component_name.clone() else {
        // No EBI: nothing to drive an intent at, so no intents are sent.
        return Ok((no_ebi_rows(profile, config), Vec::new()));
    };

    let mut workers: Vec<WorkerOut> = if config.parallel_versions {
        std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .device_versions
                .iter()
                .map(|ver| {
                    let component_name = &component_name;
                    let score = &selection.score;
                    scope.spawn(move || {
                        run_version(config, registry, profile, component_name, score, *ver, run_index)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("version worker panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        config
            .device_versions
            .iter()
            .map(|ver| {
                run_version(config, registry, profile, &component_name, &selection.score, *ver, run_index)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    workers.sort_by_key(|w| {
        config
            .device_versions
            .iter()
            .position(|v| *v == w.ver)
            .unwrap_or(usize::MAX)
    });

    // Collection window closed: adjudicate this run's beacons.
    let beacons: Vec<_> = store.snapshot().split_off(run_offset);
    let adj = adjudicate(&beacons, &config.key_id, &profile.package, registry);
    let mut warnings = adj.warnings.clone();

    let mut rows = Vec::new();
    for worker in workers {
        let ver = worker.ver.to_string();
        let mut facts = worker.facts;
        if let Some(probe) = adj.facts.get(&(profile.package.clone(), ver.clone())) {
            facts.file_support_sd = probe.file_support_sd;
            facts.file_support_private = probe.file_support_private;
            facts.js_in_file = probe.js_in_file;
        }
        let mut verdicts = vec![worker.a1];
        for attack in [AttackId::A2, AttackId::A3, AttackId::A4] {
            let mut verdict = adj
                .verdicts
                .iter()
                .find(|v| v.attack == attack && v.ver == ver)
                .cloned()
                .unwrap_or(AttackVerdict {
                    pkg: profile.package.clone(),
                    attack,
                    ver: ver.clone(),
                    outcome: Outcome::NoResponse,
                    evidence: None,
                });
            if verdict.outcome == Outcome::NoResponse
                && worker.silent_negatives.contains(&attack)
            {
                verdict.outcome = Outcome::NotVulnerable;
            }
            // Arrival time and peer address are transport noise; records
            // must be identical across (deterministic) runs.
            if let Some(Evidence::Beacon(b)) = &mut verdict.evidence {
                b.received_at = 0;
                b.source = String::new();
            }
            verdicts.push(verdict);
        }
        warnings.extend(worker.warnings);
        rows.push(PackageVersionResult {
            pkg: profile.package.clone(),
            ver,
            facts,
            verdicts,
        });
    }
    Ok((rows, warnings))
}

fn run_version(
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    profile: &BrowserProfile,
    component: &str,
    score: &crate::ebi::EbiScore,
    device_version: Version,
    run_index: u32,
) -> Result<WorkerOut, CommanderError> {
    let pkg = profile.package.clone();
    let chosen = profile
        .manifest
        .components
        .iter()
        .find(|c| c.name == component)
        .ok_or_else(|| SandboxError::UnknownComponent(component.to_string()))?;
    let exposure_class = classify_exposure(chosen);
    let engine_guess = infer_custom_engine(&profile.manifest, &default_engine_libs());

    let mut sandbox = Sandbox::new(device_version).with_transport(Box::new(HttpTransport));
    if let Some(dir) = &config.state_dir {
        sandbox = sandbox.with_state_dir(dir.join(format!("run{run_index}-{device_version}")));
    }
    sandbox.install(profile.clone())?;
    sandbox.register_remote_fixture(A3_REMOTE_ORIGIN, A3_FIXTURE_BODY);
    sandbox.warm_up(&pkg, component, &config.warm_up_sites)?;

    let targets = find_targets(&sandbox, &pkg, &config.keywords, &config.extensions)?;
    let target = targets.first().cloned();
    let mut warnings = Vec::new();
    if target.is_none() {
        warnings.push(format!(
            "{pkg} {device_version}: no target file found; A1/A2/A4 skipped"
        ));
    }

    // Content digests the receiver will demand before crying vulnerable.
    let mut expected_digests = BTreeMap::new();
    if let Some(t) = &target {
        let content = sandbox.read_file(&Zone::private(&pkg), t)?;
        expected_digests.insert(AttackId::A2.number(), sha256_hex(&content));
        expected_digests.insert(AttackId::A4.number(), sha256_hex(&content));
    }
    expected_digests.insert(AttackId::A3.number(), sha256_hex(A3_FIXTURE_BODY));
    registry.register(
        &config.key_id,
        Experiment {
            pkg: pkg.clone(),
            versions: config.device_versions.iter().map(|v| v.to_string()).collect(),
            expected_digests,
            receipt_only: config.receipt_only,
        },
    );

    let spec_for = |attack_id: AttackId| AttackSpec {
        attack_id,
        target_package: pkg.clone(),
        target_file: target.clone(),
        remote_origin: Some(A3_REMOTE_ORIGIN.to_string()),
        device_version,
        key_id: config.key_id.clone(),
        receiver_base: config.receiver_base.clone(),
    };

    // A1: bare intent at the private file; the verdict comes from the
    // Download directory, not a beacon.
    let a1 = if let Some(t) = &target {
        let payload = forge(&spec_for(AttackId::A1))
            .map_err(|e| CommanderError::Config(e.to_string()))?;
        let delivery = sandbox.send_intent(&Intent {
            component: component.to_string(),
            action: VIEW_ACTION.to_string(),
            data_url: payload.intent_data_url,
        })?;
        let basename = t.rsplit('/').next().unwrap_or(t);
        let hit = sandbox
            .list_downloads()?
            .into_iter()
            .find(|d| d.rsplit('/').next().unwrap_or(d) == basename);
        let outcome = match (&hit, delivery) {
            (Some(_), _) => Outcome::Vulnerable,
            (None, _) => Outcome::NotVulnerable,
        };
        AttackVerdict {
            pkg: pkg.clone(),
            attack: AttackId::A1,
            ver: device_version.to_string(),
            outcome,
            evidence: hit.map(Evidence::Download),
        }
    } else {
        AttackVerdict {
            pkg: pkg.clone(),
            attack: AttackId::A1,
            ver: device_version.to_string(),
            outcome: Outcome::NoResponse,
            evidence: None,
        }
    };

    // A2, A3, A4 and the probes all stage a document and fire an intent.
    let mut a4_doc_url = None;
    let mut attacks: Vec<AttackId> = vec![AttackId::A3];
    if target.is_some() {
        attacks.insert(0, AttackId::A2);
        attacks.push(AttackId::A4);
    }
    attacks.extend(AttackId::PROBES);
    for attack_id in attacks {
        let payload = match forge(&spec_for(attack_id)) {
            Ok(p) => p,
            Err(e) => {
                warnings.push(format!("{pkg} {device_version}: forge {attack_id}: {e}"));
                continue;
            }
        };
        let (zone, path) = match &payload.staging {
            Staging::Sdcard { path } => (Zone::Sdcard, path.clone()),
            Staging::Private { path } => (Zone::private(&pkg), path.clone()),
            Staging::None => continue,
        };
        sandbox.write_file(&zone, &path, payload.html_text.as_bytes())?;
        sandbox.register_payload(&zone, &path, &payload)?;
        let followup = payload.followup.clone();
        let data_url = payload.intent_data_url.clone();
        if attack_id == AttackId::A4 {
            a4_doc_url = Some(data_url.clone());
        }
        let delivered = sandbox.send_intent(&Intent {
            component: component.to_string(),
            action: VIEW_ACTION.to_string(),
            data_url,
        })?;
        if let (DeliveryResult::Loaded, Some(Followup::DeleteAndSymlink { target_file, delay_ms })) =
            (delivered, followup)
        {
            // The bait document must disappear before the delayed
            // self-read fires; the symlink sits where the page used to be.
            debug_assert_eq!(delay_ms, SYMLINK_SWAP_DELAY_MS);
            sandbox.advance_time(delay_ms)?;
            if sandbox.delete_file(&zone, &path).is_ok() {
                let device_target = Zone::private(&pkg).device_path(&target_file);
                sandbox.create_symlink(&zone, &path, &format!("file://{device_target}"))?;
            }
        }
    }

    // Close the collection window; any delayed self-read fires here.
    sandbox.advance_time(config.timeout_ms)?;

    // A mitigated symlink swap leaves a load error and no beacon; that is
    // a demonstrated negative, not an unanswered question.
    let mut silent_negatives = Vec::new();
    if let Some(doc_url) = a4_doc_url {
        let defeated = sandbox.trace().iter().any(|e| {
            matches!(e, TraceEvent::LoadError { url, .. } if *url == doc_url)
        });
        if defeated {
            silent_negatives.push(AttackId::A4);
        }
    }

    Ok(WorkerOut {
        ver: device_version,
        facts: CapabilityFacts {
            ebi: score.value,
            ebi_component: Some(component.to_string()),
            exposure_class,
            file_support_sd: None,
            file_support_private: None,
            js_in_file: None,
            engine_guess,
        },
        a1,
        silent_negatives,
        warnings,
    })
}

// ---------------------------------------------------------------------
// Union of runs

fn merge_option(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), _) | (_, Some(true)) => Some(true),
        (Some(false), _) | (_, Some(false)) => Some(false),
        _ => None,
    }
}

/// Merge runs cell-wise: vulnerable if any run says vulnerable, else
/// not_vulnerable if any run says so, else no_response. Disagreement
/// between a definitive negative and a positive is kept (vulnerable
/// wins) but flagged.
pub fn union_runs(records: &[RunRecord]) -> Result<RunRecord, CommanderError> {
    let Some(first) = records.first() else {
        return Err(CommanderError::Merge("no records to merge".into()));
    };
    for r in records {
        if r.config_id != first.config_id {
            return Err(CommanderError::Merge(format!(
                "config mismatch: `{}` vs `{}`",
                first.config_id, r.config_id
            )));
        }
    }

    let mut merged = RunRecord {
        run_index: 0,
        config_id: first.config_id.clone(),
        rows: Vec::new(),
        errors: records.iter().flat_map(|r| r.errors.clone()).collect(),
        warnings: records.iter().flat_map(|r| r.warnings.clone()).collect(),
    };

    // Keyed by (pkg, ver); rows appear in first-seen order, which is
    // already (pkg, ver) order from the suite.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String), PackageVersionResult> = BTreeMap::new();
    for record in records {
        for row in &record.rows {
            let key = (row.pkg.clone(), row.ver.clone());
            match cells.get_mut(&key) {
                None => {
                    order.push(key.clone());
                    cells.insert(key, row.clone());
                }
                Some(acc) => {
                    acc.facts.file_support_sd =
                        merge_option(acc.facts.file_support_sd, row.facts.file_support_sd);
                    acc.facts.file_support_private = merge_option(
                        acc.facts.file_support_private,
                        row.facts.file_support_private,
                    );
                    acc.facts.js_in_file =
                        merge_option(acc.facts.js_in_file, row.facts.js_in_file);
                    for verdict in &row.verdicts {
                        let slot = acc
                            .verdicts
                            .iter_mut()
                            .find(|v| v.attack == verdict.attack);
                        let Some(slot) = slot else {
                            acc.verdicts.push(verdict.clone());
                            continue;
                        };
                        let pair = (slot.outcome, verdict.outcome);
                        if matches!(
                            pair,
                            (Outcome::NotVulnerable, Outcome::Vulnerable)
                                | (Outcome::Vulnerable, Outcome::NotVulnerable)
                        ) {
                            merged.warnings.push(format!(
                                "inconsistent runs for {} {} on {}: not_vulnerable vs vulnerable, keeping vulnerable",
                                row.pkg, verdict.attack, row.ver
                            ));
                        }
                        if verdict.outcome > slot.outcome {
                            *slot = verdict.clone();
                        }
                    }
                }
            }
        }
    }
    for key in order {
        merged.rows.push(cells.remove(&key).unwrap());
    }
    Ok(merged)
}

// ---------------------------------------------------------------------
// Patch validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Blocked,
    StillVulnerable,
    Regressed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchCell {
    pub attack: AttackId,
    pub ver: String,
    pub transition: Transition,
    /// The beacon (or download) that proves a still-vulnerable or
    /// regressed cell.
    pub evidence: Option<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchReport {
    pub pkg: String,
    pub transitions: Vec<PatchCell>,
    pub warnings: Vec<String>,
}

/// Run the suite against the pre-patch and post-patch profiles and
/// report which cells changed. Identical profiles yield no transitions.
pub fn validate_patch(
    before: &BrowserProfile,
    after: &BrowserProfile,
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    store: &Arc<BeaconStore>,
) -> Result<PatchReport, CommanderError> {
    if before.package != after.package {
        return Err(CommanderError::Config(format!(
            "patch validation needs one package, got `{}` and `{}`",
            before.package, after.package
        )));
    }
    let mut report = PatchReport {
        pkg: before.package.clone(),
        transitions: Vec::new(),
        warnings: Vec::new(),
    };
    if before == after {
        return Ok(report);
    }

    let merged_before = run_profile_union(before, config, registry, store, "before")?;
    let merged_after = run_profile_union(after, config, registry, store, "after")?;
    report.warnings.extend(merged_before.warnings.clone());
    report.warnings.extend(merged_after.warnings.clone());

    let cell = |record: &RunRecord, attack: AttackId, ver: &str| -> Option<AttackVerdict> {
        record
            .rows
            .iter()
            .filter(|r| r.ver == ver)
            .flat_map(|r| r.verdicts.iter())
            .find(|v| v.attack == attack)
            .cloned()
    };
    for ver in &config.device_versions {
        let ver = ver.to_string();
        for attack in AttackId::ATTACKS {
            let b = cell(&merged_before, attack, &ver);
            let a = cell(&merged_after, attack, &ver);
            let b_vuln = matches!(&b, Some(v) if v.outcome == Outcome::Vulnerable);
            let a_vuln = matches!(&a, Some(v) if v.outcome == Outcome::Vulnerable);
            let transition = match (b_vuln, a_vuln) {
                (true, false) => Transition::Blocked,
                (true, true) => Transition::StillVulnerable,
                (false, true) => Transition::Regressed,
                (false, false) => continue,
            };
            report.transitions.push(PatchCell {
                attack,
                ver: ver.clone(),
                transition,
                evidence: if a_vuln {
                    a.and_then(|v| v.evidence)
                } else {
                    None
                },
            });
        }
    }
    Ok(report)
}

/// Run the configured number of passes against a single profile (staged
/// into a temporary corpus) and union them.
fn run_profile_union(
    profile: &BrowserProfile,
    config: &RunConfig,
    registry: &Arc<ExperimentRegistry>,
    store: &Arc<BeaconStore>,
    tag: &str,
) -> Result<RunRecord, CommanderError> {
    let dir = std::env::temp_dir().join(format!(
        "filecross-patch-{}-{}-{}",
        profile.package,
        tag,
        std::process::id()
    ));
    std::fs::create_dir_all(&dir)?;
    let manifest_name = "AndroidManifest.xml";
    std::fs::write(dir.join(manifest_name), crate::manifest::to_xml(&profile.manifest))?;
    let record = crate::sandbox::ProfileRecord {
        package: profile.package.clone(),
        manifest_path: manifest_name.to_string(),
        native_libs: profile.manifest.native_libs.clone(),
        dex_strings: profile.manifest.dex_strings.clone(),
        compiled_sdk: profile.compiled_sdk,
        engine: profile.engine.clone(),
        handles_external_file_intents: profile.handles_external_file_intents,
        file_scheme_supported: profile.file_scheme_supported,
        private_zone_file_access: profile.private_zone_file_access,
        js_in_file: profile.js_in_file,
        uses_legacy_file_access_api: profile.uses_legacy_file_access_api,
        symlink_mitigated: profile.symlink_mitigated,
        auto_download_unrenderable: profile.auto_download_unrenderable,
        patch_modes: profile.patch_modes.clone(),
    };
    std::fs::write(
        dir.join("profile.json"),
        serde_json::to_string_pretty(&record).map_err(|e| CommanderError::Corpus(e.to_string()))?,
    )?;
    let mut sub = config.clone();
    sub.corpus_dir = dir.clone();
    // The two sweeps must not vouch for each other.
    sub.key_id = format!("{}-{tag}", config.key_id);
    let records = run_suite(&sub, registry, store)?;
    let merged = union_runs(&records)?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(merged)
}

// ---------------------------------------------------------------------
// Result persistence

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "line")]
enum LogLine {
    Meta {
        run_index: u32,
        config_id: String,
        errors: Vec<String>,
        warnings: Vec<String>,
    },
    Row {
        run_index: u32,
        row: PackageVersionResult,
    },
}

pub fn run_log_name(kid: &str, run_index: u32) -> String {
    if run_index == 0 {
        format!("results-{kid}-union.log")
    } else {
        format!("results-{kid}-run{run_index}.log")
    }
}

/// Persist one record as line-delimited JSON under `dir`.
pub fn write_run_log(dir: &Path, kid: &str, record: &RunRecord) -> Result<PathBuf, CommanderError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(run_log_name(kid, record.run_index));
    let mut out = std::fs::File::create(&path)?;
    let meta = LogLine::Meta {
        run_index: record.run_index,
        config_id: record.config_id.clone(),
        errors: record.errors.clone(),
        warnings: record.warnings.clone(),
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&meta).map_err(|e| CommanderError::Log(e.to_string()))?
    )?;
    for row in &record.rows {
        let line = LogLine::Row {
            run_index: record.run_index,
            row: row.clone(),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&line).map_err(|e| CommanderError::Log(e.to_string()))?
        )?;
    }
    Ok(path)
}

pub fn read_run_log(path: &Path) -> Result<RunRecord, CommanderError> {
    let file = std::fs::File::open(path)?;
    let mut record: Option<RunRecord> = None;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .map_err(|e| CommanderError::Log(format!("{}: {e}", path.display())))?;
        match parsed {
            LogLine::Meta {
                run_index,
                config_id,
                errors,
                warnings,
            } => {
                record = Some(RunRecord {
                    run_index,
                    config_id,
                    rows: Vec::new(),
                    errors,
                    warnings,
                });
            }
            LogLine::Row { row, .. } => {
                let Some(record) = record.as_mut() else {
                    return Err(CommanderError::Log(format!(
                        "{}: row before meta line",
                        path.display()
                    )));
                };
                record.rows.push(row);
            }
        }
    }
    record.ok_or_else(|| CommanderError::Log(format!("{}: empty log", path.display())))
}
