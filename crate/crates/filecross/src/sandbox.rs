//! The device-backend interface and its reference implementation: a
//! deterministic browser-behavior simulator with a virtual filesystem,
//! a virtual clock, and the SOP / patch policy model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ebi::score_component;
use crate::forge::{OriginKind, Payload, PlanAction};
use crate::manifest::{classify_exposure, ExposureClass, ManifestComponent, ManifestDoc};
use crate::version::Version;

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("profile `{0}` is not installed")]
    NotInstalled(String),
    #[error("no such file `{0}`")]
    NoSuchFile(String),
    #[error("unsupported URL `{0}`")]
    BadUrl(String),
    #[error("symlink depth exceeded at `{0}`")]
    SymlinkLoop(String),
    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A virtual filesystem zone. The harness writing into a private zone
/// models the rooted-phone capability; apps themselves cannot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Private { pkg: String },
    Sdcard,
}

impl Zone {
    pub fn private(pkg: &str) -> Zone {
        Zone::Private { pkg: pkg.to_string() }
    }

    /// The absolute device path of a file in this zone.
    pub fn device_path(&self, path: &str) -> String {
        match self {
            Zone::Private { pkg } => format!("/data/data/{pkg}/{path}"),
            Zone::Sdcard => format!("/sdcard/{path}"),
        }
    }

    pub fn file_url(&self, path: &str) -> String {
        format!("file://{}", self.device_path(path))
    }
}

/// Split a `file://` URL or absolute device path into zone and zone path.
pub fn parse_file_location(url: &str) -> Result<(Zone, String), SandboxError> {
    let path = url.strip_prefix("file://").unwrap_or(url);
    if let Some(rest) = path.strip_prefix("/data/data/") {
        let (pkg, sub) = rest
            .split_once('/')
            .ok_or_else(|| SandboxError::BadUrl(url.to_string()))?;
        return Ok((Zone::private(pkg), sub.to_string()));
    }
    if let Some(rest) = path.strip_prefix("/sdcard/") {
        return Ok((Zone::Sdcard, rest.to_string()));
    }
    Err(SandboxError::BadUrl(url.to_string()))
}

pub fn url_scheme(url: &str) -> &str {
    url.split(':').next().unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    File(Vec<u8>),
    /// Target is an absolute device path.
    Symlink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderingPoint {
    UserBar,
    ExternalIntent,
}

/// JavaScript support split per rendering point; the two are independent
/// so a patch can cover one and miss the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsInFile {
    pub user_bar: bool,
    pub external_intent: bool,
}

impl JsInFile {
    pub fn both(on: bool) -> Self {
        JsInFile { user_bar: on, external_intent: on }
    }

    pub fn at(&self, point: RenderingPoint) -> bool {
        match point {
            RenderingPoint::UserBar => self.user_bar,
            RenderingPoint::ExternalIntent => self.external_intent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    /// Firefox-style: stop serving unrenderable private files.
    DisablePrivateUnrenderable,
    /// Lightning-style: refuse file:// URLs arriving from other apps.
    BlockExternalFileUrls,
    /// Disable JavaScript in file:// documents at the given points.
    DisableJsInFile(BTreeSet<RenderingPoint>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    SystemDefault,
    Custom(CustomEngineFlags),
}

/// SOP behavior declared verbatim by a custom engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomEngineFlags {
    pub allow_file_to_file: bool,
    pub allow_file_to_http: bool,
    pub symlink_flaw_present: bool,
}

/// The behavioral model of one browser app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserProfile {
    pub package: String,
    pub manifest: ManifestDoc,
    pub compiled_sdk: Version,
    pub engine: Engine,
    pub handles_external_file_intents: bool,
    pub file_scheme_supported: bool,
    pub private_zone_file_access: bool,
    pub js_in_file: JsInFile,
    pub uses_legacy_file_access_api: bool,
    pub symlink_mitigated: bool,
    pub auto_download_unrenderable: bool,
    #[serde(default)]
    pub patch_modes: BTreeSet<PatchMode>,
}

impl BrowserProfile {
    pub fn has_patch(&self, p: &PatchMode) -> bool {
        self.patch_modes.contains(p)
    }

    fn js_disabled_by_patch(&self, point: RenderingPoint) -> bool {
        self.patch_modes.iter().any(|m| match m {
            PatchMode::DisableJsInFile(points) => points.contains(&point),
            _ => false,
        })
    }

    /// JavaScript availability at a rendering point, patches applied.
    pub fn effective_js(&self, point: RenderingPoint) -> bool {
        self.js_in_file.at(point) && !self.js_disabled_by_patch(point)
    }

    /// Auto-download of unrenderable private files, patches applied.
    pub fn effective_auto_download(&self) -> bool {
        self.auto_download_unrenderable
            && !self.has_patch(&PatchMode::DisablePrivateUnrenderable)
    }
}

/// On-disk corpus record: the profile fields with the manifest stored as
/// a sibling XML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub package: String,
    pub manifest_path: String,
    /// Shared-library names and interesting dex strings pulled from the
    /// APK; the manifest XML does not carry these.
    #[serde(default)]
    pub native_libs: Vec<String>,
    #[serde(default)]
    pub dex_strings: Vec<String>,
    pub compiled_sdk: Version,
    pub engine: Engine,
    pub handles_external_file_intents: bool,
    pub file_scheme_supported: bool,
    pub private_zone_file_access: bool,
    pub js_in_file: JsInFile,
    pub uses_legacy_file_access_api: bool,
    pub symlink_mitigated: bool,
    pub auto_download_unrenderable: bool,
    #[serde(default)]
    pub patch_modes: BTreeSet<PatchMode>,
}

/// Load a profile JSON; `manifest_path` is resolved relative to the
/// profile file's directory.
pub fn load_profile(path: &Path) -> Result<BrowserProfile, SandboxError> {
    let text = std::fs::read_to_string(path)?;
    let record: ProfileRecord =
        serde_json::from_str(&text).map_err(|e| SandboxError::Profile(e.to_string()))?;
    let manifest_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&record.manifest_path);
    let manifest_text = std::fs::read_to_string(&manifest_path)?;
    let mut manifest = crate::manifest::parse_manifest(&manifest_text)
        .map_err(|e| SandboxError::Profile(format!("{}: {e}", manifest_path.display())))?;
    manifest.native_libs = record.native_libs;
    manifest.dex_strings = record.dex_strings;
    if manifest.package_name != record.package {
        return Err(SandboxError::Profile(format!(
            "profile package `{}` does not match manifest package `{}`",
            record.package, manifest.package_name
        )));
    }
    Ok(BrowserProfile {
        package: record.package,
        manifest,
        compiled_sdk: record.compiled_sdk,
        engine: record.engine,
        handles_external_file_intents: record.handles_external_file_intents,
        file_scheme_supported: record.file_scheme_supported,
        private_zone_file_access: record.private_zone_file_access,
        js_in_file: record.js_in_file,
        uses_legacy_file_access_api: record.uses_legacy_file_access_api,
        symlink_mitigated: record.symlink_mitigated,
        auto_download_unrenderable: record.auto_download_unrenderable,
        patch_modes: record.patch_modes,
    })
}

/// The SOP decisions in force for one profile on one device version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SopPolicy {
    pub device_version: Version,
    pub allow_file_to_file: bool,
    pub allow_file_to_http: bool,
    pub symlink_flaw_present: bool,
}

/// Derive the effective SOP policy. The default webkit engine got its
/// file-origin fix in 4.1, but only for apps compiled against 4.1+ that
/// avoid the legacy file-access APIs; the symlink flaw has no system
/// patch on any version, 4.4 included. Custom engines carry their flags
/// verbatim.
pub fn effective_policy(profile: &BrowserProfile, device_version: Version) -> SopPolicy {
    match &profile.engine {
        Engine::SystemDefault => {
            let sop_broken = device_version < Version::SOP_FIX
                || profile.compiled_sdk < Version::SOP_FIX
                || profile.uses_legacy_file_access_api;
            SopPolicy {
                device_version,
                allow_file_to_file: sop_broken,
                allow_file_to_http: sop_broken,
                symlink_flaw_present: !profile.symlink_mitigated,
            }
        }
        Engine::Custom(flags) => SopPolicy {
            device_version,
            allow_file_to_file: flags.allow_file_to_file,
            allow_file_to_http: flags.allow_file_to_http,
            symlink_flaw_present: flags.symlink_flaw_present && !profile.symlink_mitigated,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotExposed,
    FileBlocked,
    UnsupportedScheme,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryResult {
    Rejected(RejectReason),
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub component: String,
    pub action: String,
    pub data_url: String,
}

/// Everything observable the sandbox did; beacon URLs appear in order of
/// emission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    IntentRejected { component: String, reason: RejectReason },
    DocumentLoaded { url: String },
    DocumentDenied { url: String, why: String },
    NotRendered { url: String },
    AutoDownloaded { from: String, to: String },
    ScriptsRan { url: String },
    ScriptsSkipped { url: String },
    FetchHonored { url: String },
    FetchDenied { url: String, why: String },
    LoadError { url: String, why: String },
    BeaconEmitted { url: String },
    WarmUpRefused { component: String },
}

/// Outbound beacon channel. The full pipeline uses HTTP; unit tests can
/// read the trace instead.
pub trait BeaconTransport: Send {
    fn emit(&self, url: &str);
}

pub struct NullTransport;

impl BeaconTransport for NullTransport {
    fn emit(&self, _url: &str) {}
}

/// Sends each beacon as a real HTTP GET.
pub struct HttpTransport;

impl BeaconTransport for HttpTransport {
    fn emit(&self, url: &str) {
        let _ = crate::receiver::http_get(url);
    }
}

/// The device-backend contract shared by the simulator and any future
/// real-device transport. Private-zone reads and writes model the rooted
/// phone used for target discovery and staging.
pub trait DeviceBackend {
    fn install(&mut self, profile: BrowserProfile) -> Result<(), SandboxError>;
    fn send_intent(&mut self, intent: &Intent) -> Result<DeliveryResult, SandboxError>;
    /// Attach a forged payload's structured plan to a staged document.
    /// Simulated backends interpret the plan; real backends, which run
    /// the HTML itself, may ignore this.
    fn register_payload(&mut self, zone: &Zone, path: &str, payload: &Payload)
        -> Result<(), SandboxError>;
    fn write_file(&mut self, zone: &Zone, path: &str, bytes: &[u8]) -> Result<(), SandboxError>;
    fn read_file(&self, zone: &Zone, path: &str) -> Result<Vec<u8>, SandboxError>;
    /// Zone paths under `prefix`, sorted.
    fn read_dir(&self, zone: &Zone, prefix: &str) -> Result<Vec<String>, SandboxError>;
    fn delete_file(&mut self, zone: &Zone, path: &str) -> Result<(), SandboxError>;
    /// `target` is an absolute device path.
    fn create_symlink(&mut self, zone: &Zone, link_path: &str, target: &str)
        -> Result<(), SandboxError>;
    /// Files in the SD card Download directory.
    fn list_downloads(&self) -> Result<Vec<String>, SandboxError>;
    /// Advance the virtual clock, firing any due delayed actions.
    /// Simulated backends only.
    fn advance_time(&mut self, ms: u64) -> Result<(), SandboxError>;
}

struct PendingFetch {
    fire_at: u64,
    seq: u64,
    pkg: String,
    doc_zone: Zone,
    doc_path: String,
    origin: OriginKind,
    url: String,
    payload: Payload,
}

/// The simulated device: one virtual device at one Android version.
pub struct Sandbox {
    pub device_version: Version,
    profiles: HashMap<String, BrowserProfile>,
    zones: HashMap<Zone, BTreeMap<String, Node>>,
    plans: HashMap<(Zone, String), Payload>,
    remote_fixtures: HashMap<String, Vec<u8>>,
    clock_ms: u64,
    next_seq: u64,
    pending: Vec<PendingFetch>,
    trace: Vec<TraceEvent>,
    transport: Box<dyn BeaconTransport>,
    state_dir: Option<PathBuf>,
}

const RENDERABLE_EXTENSIONS: [&str; 3] = ["html", "htm", "txt"];
const MAX_SYMLINK_DEPTH: usize = 8;

fn is_renderable(path: &str) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| RENDERABLE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

impl Sandbox {
    pub fn new(device_version: Version) -> Self {
        Sandbox {
            device_version,
            profiles: HashMap::new(),
            zones: HashMap::new(),
            plans: HashMap::new(),
            remote_fixtures: HashMap::new(),
            clock_ms: 0,
            next_seq: 0,
            pending: Vec::new(),
            trace: Vec::new(),
            transport: Box::new(NullTransport),
            state_dir: None,
        }
    }

    pub fn with_transport(mut self, transport: Box<dyn BeaconTransport>) -> Self {
        self.transport = transport;
        self
    }

    /// Mirror regular files under `dir/state/<zone>/...` on every write.
    pub fn with_state_dir(mut self, dir: PathBuf) -> Self {
        self.state_dir = Some(dir);
        self
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    /// Beacon URLs emitted so far, in order.
    pub fn beacons(&self) -> Vec<String> {
        self.trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::BeaconEmitted { url } => Some(url.clone()),
                _ => None,
            })
            .collect()
    }

    /// Register the body served for a cross-protocol fetch of `url`.
    pub fn register_remote_fixture(&mut self, url: &str, body: &[u8]) {
        self.remote_fixtures.insert(url.to_string(), body.to_vec());
    }

    fn profile(&self, pkg: &str) -> Result<&BrowserProfile, SandboxError> {
        self.profiles
            .get(pkg)
            .ok_or_else(|| SandboxError::NotInstalled(pkg.to_string()))
    }

    fn find_component(&self, name: &str) -> Option<(&BrowserProfile, &ManifestComponent)> {
        for p in self.profiles.values() {
            if let Some(c) = p.manifest.components.iter().find(|c| c.name == name) {
                return Some((p, c));
            }
        }
        None
    }

    fn node(&self, zone: &Zone, path: &str) -> Option<&Node> {
        self.zones.get(zone).and_then(|z| z.get(path))
    }

    /// Follow symlinks to file contents.
    fn resolve_bytes(&self, zone: &Zone, path: &str) -> Result<Vec<u8>, SandboxError> {
        let mut zone = zone.clone();
        let mut path = path.to_string();
        for _ in 0..MAX_SYMLINK_DEPTH {
            match self.node(&zone, &path) {
                Some(Node::File(bytes)) => return Ok(bytes.clone()),
                Some(Node::Symlink(target)) => {
                    let (z, p) = parse_file_location(target)?;
                    zone = z;
                    path = p;
                }
                None => return Err(SandboxError::NoSuchFile(zone.device_path(&path))),
            }
        }
        Err(SandboxError::SymlinkLoop(zone.device_path(&path)))
    }

    fn persist(&self, zone: &Zone, path: &str, bytes: Option<&[u8]>) {
        let Some(root) = &self.state_dir else { return };
        let zone_dir = match zone {
            Zone::Private { pkg } => root.join("state").join(pkg).join("private"),
            Zone::Sdcard => root.join("state").join("sdcard"),
        };
        let full = zone_dir.join(path);
        match bytes {
            Some(bytes) => {
                if let Some(parent) = full.parent() {
                    let _ = std::fs::create_dir_all(parent);
                }
                let _ = std::fs::write(full, bytes);
            }
            None => {
                let _ = std::fs::remove_file(full);
            }
        }
    }

    fn emit_beacon(&mut self, url: String) {
        self.transport.emit(&url);
        self.trace.push(TraceEvent::BeaconEmitted { url });
    }

    /// Load a `file://` document at a rendering point and, when it is a
    /// registered payload, interpret its plan.
    pub fn load_document(
        &mut self,
        pkg: &str,
        url: &str,
        point: RenderingPoint,
    ) -> Result<(), SandboxError> {
        let profile = self.profile(pkg)?.clone();
        let (zone, path) = parse_file_location(url)?;

        if matches!(zone, Zone::Private { .. }) && !profile.private_zone_file_access {
            self.trace.push(TraceEvent::DocumentDenied {
                url: url.to_string(),
                why: "private zone access disabled".into(),
            });
            return Ok(());
        }

        let bytes = match self.resolve_bytes(&zone, &path) {
            Ok(b) => b,
            Err(_) => {
                self.trace.push(TraceEvent::LoadError {
                    url: url.to_string(),
                    why: "no such file".into(),
                });
                return Ok(());
            }
        };

        if !is_renderable(&path) {
            if matches!(zone, Zone::Private { .. })
                && profile.has_patch(&PatchMode::DisablePrivateUnrenderable)
            {
                self.trace.push(TraceEvent::NotRendered { url: url.to_string() });
                return Ok(());
            }
            if profile.auto_download_unrenderable {
                let basename = path.rsplit('/').next().unwrap_or(&path).to_string();
                let dest = format!("Download/{basename}");
                self.write_file(&Zone::Sdcard, &dest, &bytes)?;
                self.trace.push(TraceEvent::AutoDownloaded {
                    from: url.to_string(),
                    to: dest,
                });
            } else {
                self.trace.push(TraceEvent::NotRendered { url: url.to_string() });
            }
            return Ok(());
        }

        self.trace.push(TraceEvent::DocumentLoaded { url: url.to_string() });

        let Some(payload) = self.plans.get(&(zone.clone(), path.clone())).cloned() else {
            return Ok(());
        };

        let js = profile.effective_js(point);
        if js {
            self.trace.push(TraceEvent::ScriptsRan { url: url.to_string() });
        } else {
            self.trace.push(TraceEvent::ScriptsSkipped { url: url.to_string() });
        }

        for action in payload.plan.clone() {
            match action {
                PlanAction::StaticBeacon { con } => {
                    let url = payload.beacon.url_for_content(con.as_bytes());
                    self.emit_beacon(url);
                }
                PlanAction::ScriptedBeacon { con } => {
                    if js {
                        let url = payload.beacon.url_for_content(con.as_bytes());
                        self.emit_beacon(url);
                    }
                }
                PlanAction::NoscriptBeacon { con } => {
                    if !js {
                        let url = payload.beacon.url_for_content(con.as_bytes());
                        self.emit_beacon(url);
                    }
                }
                PlanAction::FetchAndBeacon { origin, url: fetch_url, delay_ms } => {
                    if !js {
                        continue;
                    }
                    if delay_ms == 0 {
                        self.run_fetch(&profile, &zone, &path, origin, &fetch_url, &payload);
                    } else {
                        let seq = self.next_seq;
                        self.next_seq += 1;
                        self.pending.push(PendingFetch {
                            fire_at: self.clock_ms + delay_ms,
                            seq,
                            pkg: pkg.to_string(),
                            doc_zone: zone.clone(),
                            doc_path: path.clone(),
                            origin,
                            url: fetch_url,
                            payload: payload.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Execute one fetch action and beacon its result. A denied fetch
    /// still beacons (the script ran; the response was empty); a document
    /// that can no longer be resolved aborts with a load error and no
    /// beacon.
    fn run_fetch(
        &mut self,
        profile: &BrowserProfile,
        doc_zone: &Zone,
        doc_path: &str,
        origin: OriginKind,
        url: &str,
        payload: &Payload,
    ) {
        let policy = effective_policy(profile, self.device_version);
        let content: Option<Vec<u8>> = match origin {
            OriginKind::SameFile | OriginKind::CrossFile => {
                if !policy.allow_file_to_file {
                    self.trace.push(TraceEvent::FetchDenied {
                        url: url.to_string(),
                        why: "file-to-file SOP enforced".into(),
                    });
                    Some(Vec::new())
                } else {
                    match parse_file_location(url) {
                        Ok((zone, path)) => {
                            if matches!(zone, Zone::Private { .. })
                                && !profile.private_zone_file_access
                            {
                                self.trace.push(TraceEvent::FetchDenied {
                                    url: url.to_string(),
                                    why: "private zone access disabled".into(),
                                });
                                Some(Vec::new())
                            } else {
                                match self.resolve_bytes(&zone, &path) {
                                    Ok(bytes) => {
                                        self.trace.push(TraceEvent::FetchHonored {
                                            url: url.to_string(),
                                        });
                                        Some(bytes)
                                    }
                                    Err(_) => {
                                        self.trace.push(TraceEvent::FetchDenied {
                                            url: url.to_string(),
                                            why: "no such file".into(),
                                        });
                                        Some(Vec::new())
                                    }
                                }
                            }
                        }
                        Err(_) => Some(Vec::new()),
                    }
                }
            }
            OriginKind::CrossProtocol => {
                if !policy.allow_file_to_http {
                    self.trace.push(TraceEvent::FetchDenied {
                        url: url.to_string(),
                        why: "file-to-http SOP enforced".into(),
                    });
                    Some(Vec::new())
                } else {
                    match self.remote_fixtures.get(url) {
                        Some(body) => {
                            self.trace
                                .push(TraceEvent::FetchHonored { url: url.to_string() });
                            Some(body.clone())
                        }
                        None => {
                            self.trace.push(TraceEvent::FetchDenied {
                                url: url.to_string(),
                                why: "no remote fixture registered".into(),
                            });
                            Some(Vec::new())
                        }
                    }
                }
            }
            OriginKind::SelfDocument => {
                // Re-resolve the document path at execution time; the
                // harness may have swapped it for a symlink meanwhile.
                match self.node(doc_zone, doc_path).cloned() {
                    Some(Node::File(bytes)) => {
                        self.trace
                            .push(TraceEvent::FetchHonored { url: url.to_string() });
                        Some(bytes)
                    }
                    Some(Node::Symlink(target)) => {
                        let into_denied_private = parse_file_location(&target)
                            .map(|(z, _)| matches!(z, Zone::Private { .. }))
                            .unwrap_or(false)
                            && !profile.private_zone_file_access;
                        if into_denied_private {
                            self.trace.push(TraceEvent::FetchDenied {
                                url: url.to_string(),
                                why: "private zone access disabled".into(),
                            });
                            Some(Vec::new())
                        } else if policy.symlink_flaw_present {
                            match parse_file_location(&target)
                                .and_then(|(z, p)| self.resolve_bytes(&z, &p))
                            {
                                Ok(bytes) => {
                                    self.trace.push(TraceEvent::FetchHonored {
                                        url: url.to_string(),
                                    });
                                    Some(bytes)
                                }
                                Err(_) => {
                                    self.trace.push(TraceEvent::LoadError {
                                        url: url.to_string(),
                                        why: "dangling symlink".into(),
                                    });
                                    None
                                }
                            }
                        } else {
                            self.trace.push(TraceEvent::LoadError {
                                url: url.to_string(),
                                why: "symlink not followed".into(),
                            });
                            None
                        }
                    }
                    None => {
                        self.trace.push(TraceEvent::LoadError {
                            url: url.to_string(),
                            why: "document gone".into(),
                        });
                        None
                    }
                }
            }
        };

        if let Some(bytes) = content {
            let beacon_url = payload.beacon.url_for_content(&bytes);
            self.emit_beacon(beacon_url);
        }
    }

    /// Browse normal sites through the named component to populate the
    /// private file zone. A component that is not a working EBI does not
    /// respond, so no files appear. Repeated warm-ups overwrite the same
    /// fixtures.
    pub fn warm_up(
        &mut self,
        pkg: &str,
        component_name: &str,
        sites: &[String],
    ) -> Result<(), SandboxError> {
        let profile = self.profile(pkg)?;
        let component = profile
            .manifest
            .components
            .iter()
            .find(|c| c.name == component_name)
            .ok_or_else(|| SandboxError::UnknownComponent(component_name.to_string()))?;
        if score_component(component).value == 0
            || classify_exposure(component) == ExposureClass::NotExposed
        {
            self.trace.push(TraceEvent::WarmUpRefused {
                component: component_name.to_string(),
            });
            return Ok(());
        }

        let zone = Zone::private(pkg);
        let cookies: String = sites
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s}\tSESSION={:08x}\n", 0x5eed_0000u64 + i as u64))
            .collect();
        let history: String = sites.iter().map(|s| format!("visited\t{s}\n")).collect();
        let bookmarks: String = sites.iter().map(|s| format!("bookmark\t{s}\n")).collect();
        self.write_file(&zone, "app_data/Cookies", cookies.as_bytes())?;
        self.write_file(&zone, "databases/history.db", history.as_bytes())?;
        self.write_file(&zone, "files/bookmarks.db", bookmarks.as_bytes())?;
        Ok(())
    }
}

impl DeviceBackend for Sandbox {
    fn install(&mut self, profile: BrowserProfile) -> Result<(), SandboxError> {
        self.zones
            .entry(Zone::private(&profile.package))
            .or_default();
        self.zones.entry(Zone::Sdcard).or_default();
        self.profiles.insert(profile.package.clone(), profile);
        Ok(())
    }

    fn send_intent(&mut self, intent: &Intent) -> Result<DeliveryResult, SandboxError> {
        let (profile, exposure) = {
            let Some((profile, component)) = self.find_component(&intent.component) else {
                return Err(SandboxError::UnknownComponent(intent.component.clone()));
            };
            (profile.clone(), classify_exposure(component))
        };
        if exposure == ExposureClass::NotExposed {
            self.trace.push(TraceEvent::IntentRejected {
                component: intent.component.clone(),
                reason: RejectReason::NotExposed,
            });
            return Ok(DeliveryResult::Rejected(RejectReason::NotExposed));
        }
        if url_scheme(&intent.data_url) == "file" {
            if !profile.handles_external_file_intents
                || profile.has_patch(&PatchMode::BlockExternalFileUrls)
            {
                self.trace.push(TraceEvent::IntentRejected {
                    component: intent.component.clone(),
                    reason: RejectReason::FileBlocked,
                });
                return Ok(DeliveryResult::Rejected(RejectReason::FileBlocked));
            }
            if !profile.file_scheme_supported {
                self.trace.push(TraceEvent::IntentRejected {
                    component: intent.component.clone(),
                    reason: RejectReason::UnsupportedScheme,
                });
                return Ok(DeliveryResult::Rejected(RejectReason::UnsupportedScheme));
            }
            self.load_document(
                &profile.package,
                &intent.data_url.clone(),
                RenderingPoint::ExternalIntent,
            )?;
        }
        Ok(DeliveryResult::Loaded)
    }

    fn register_payload(
        &mut self,
        zone: &Zone,
        path: &str,
        payload: &Payload,
    ) -> Result<(), SandboxError> {
        self.plans
            .insert((zone.clone(), path.to_string()), payload.clone());
        Ok(())
    }

    fn write_file(&mut self, zone: &Zone, path: &str, bytes: &[u8]) -> Result<(), SandboxError> {
        self.zones
            .entry(zone.clone())
            .or_default()
            .insert(path.to_string(), Node::File(bytes.to_vec()));
        self.persist(zone, path, Some(bytes));
        Ok(())
    }

    fn read_file(&self, zone: &Zone, path: &str) -> Result<Vec<u8>, SandboxError> {
        self.resolve_bytes(zone, path)
    }

    fn read_dir(&self, zone: &Zone, prefix: &str) -> Result<Vec<String>, SandboxError> {
        Ok(self
            .zones
            .get(zone)
            .map(|z| {
                z.keys()
                    .filter(|k| k.starts_with(prefix))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default())
    }

    fn delete_file(&mut self, zone: &Zone, path: &str) -> Result<(), SandboxError> {
        let removed = self
            .zones
            .get_mut(zone)
            .and_then(|z| z.remove(path))
            .is_some();
        if !removed {
            return Err(SandboxError::NoSuchFile(zone.device_path(path)));
        }
        self.persist(zone, path, None);
        Ok(())
    }

    fn create_symlink(
        &mut self,
        zone: &Zone,
        link_path: &str,
        target: &str,
    ) -> Result<(), SandboxError> {
        self.zones
            .entry(zone.clone())
            .or_default()
            .insert(link_path.to_string(), Node::Symlink(target.to_string()));
        Ok(())
    }

    fn list_downloads(&self) -> Result<Vec<String>, SandboxError> {
        self.read_dir(&Zone::Sdcard, "Download/")
    }

    fn advance_time(&mut self, ms: u64) -> Result<(), SandboxError> {
        let target = self.clock_ms + ms;
        loop {
            let due = self
                .pending
                .iter()
                .enumerate()
                .filter(|(_, p)| p.fire_at <= target)
                .min_by_key(|(_, p)| (p.fire_at, p.seq))
                .map(|(i, _)| i);
            let Some(i) = due else { break };
            let p = self.pending.remove(i);
            self.clock_ms = p.fire_at;
            let profile = self.profile(&p.pkg)?.clone();
            self.run_fetch(&profile, &p.doc_zone, &p.doc_path, p.origin, &p.url, &p.payload);
        }
        self.clock_ms = target;
        Ok(())
    }
}

/// A real-device transport is declared but not implemented; every
/// operation reports itself unsupported.
pub struct RealDeviceBackend;

impl DeviceBackend for RealDeviceBackend {
    fn install(&mut self, _: BrowserProfile) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device install"))
    }
    fn send_intent(&mut self, _: &Intent) -> Result<DeliveryResult, SandboxError> {
        Err(SandboxError::Unsupported("real-device send_intent"))
    }
    fn register_payload(&mut self, _: &Zone, _: &str, _: &Payload) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device register_payload"))
    }
    fn write_file(&mut self, _: &Zone, _: &str, _: &[u8]) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device write_file"))
    }
    fn read_file(&self, _: &Zone, _: &str) -> Result<Vec<u8>, SandboxError> {
        Err(SandboxError::Unsupported("real-device read_file"))
    }
    fn read_dir(&self, _: &Zone, _: &str) -> Result<Vec<String>, SandboxError> {
        Err(SandboxError::Unsupported("real-device read_dir"))
    }
    fn delete_file(&mut self, _: &Zone, _: &str) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device delete_file"))
    }
    fn create_symlink(&mut self, _: &Zone, _: &str, _: &str) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device create_symlink"))
    }
    fn list_downloads(&self) -> Result<Vec<String>, SandboxError> {
        Err(SandboxError::Unsupported("real-device list_downloads"))
    }
    fn advance_time(&mut self, _: u64) -> Result<(), SandboxError> {
        Err(SandboxError::Unsupported("real-device advance_time"))
    }
}

/// Search a private file zone for sensitive files: keyword hits ordered
/// by keyword priority then path, followed by extension hits by path.
pub fn find_targets(
    backend: &dyn DeviceBackend,
    pkg: &str,
    keywords: &[String],
    extensions: &[String],
) -> Result<Vec<String>, SandboxError> {
    let zone = Zone::private(pkg);
    let paths = backend.read_dir(&zone, "")?;
    let mut ranked: Vec<(usize, &String)> = Vec::new();
    let mut by_extension: Vec<&String> = Vec::new();
    for path in &paths {
        let basename = path.rsplit('/').next().unwrap_or(path).to_ascii_lowercase();
        if let Some(rank) = keywords.iter().position(|k| basename.contains(k.as_str())) {
            ranked.push((rank, path));
        } else if extensions.iter().any(|e| basename.ends_with(e.as_str())) {
            by_extension.push(path);
        }
    }
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    by_extension.sort();
    Ok(ranked
        .into_iter()
        .map(|(_, p)| p.clone())
        .chain(by_extension.into_iter().cloned())
        .collect())
}

pub fn default_keywords() -> Vec<String> {
    ["cookie", "password", "bookmark"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn default_extensions() -> Vec<String> {
    [".sqlite", ".db"].iter().map(|s| s.to_string()).collect()
}
