//! The web receiver: an HTTP endpoint collecting exfiltration beacons,
//! an append-only beacon log, and the adjudication that turns beacons
//! into per-attack verdicts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use percent_encoding::{percent_decode_str, percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::forge::AttackId;

pub const MAX_QUERY_BYTES: usize = 16 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ReceiverError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed beacon log line: {0}")]
    BadLogLine(String),
}

/// One received beacon, five wire parameters plus receipt metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beacon {
    pub pkg: String,
    pub atk: u8,
    /// Percent-decoded content.
    pub con: String,
    pub ver: String,
    pub kid: String,
    /// Milliseconds since the Unix epoch.
    pub received_at: u64,
    /// Peer address the beacon arrived from.
    pub source: String,
}

impl Beacon {
    /// Tab-separated log line, `con` re-percent-encoded.
    pub fn to_log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.pkg,
            self.atk,
            percent_encode(self.con.as_bytes(), NON_ALPHANUMERIC),
            self.ver,
            self.kid,
            self.received_at,
            self.source
        )
    }

    pub fn from_log_line(line: &str) -> Result<Beacon, ReceiverError> {
        let mut fields = line.split('\t');
        let mut next = || {
            fields
                .next()
                .ok_or_else(|| ReceiverError::BadLogLine(line.to_string()))
        };
        let pkg = next()?.to_string();
        let atk = next()?
            .parse()
            .map_err(|_| ReceiverError::BadLogLine(line.to_string()))?;
        let con = percent_decode_str(next()?).decode_utf8_lossy().into_owned();
        let ver = next()?.to_string();
        let kid = next()?.to_string();
        let received_at = next()?
            .parse()
            .map_err(|_| ReceiverError::BadLogLine(line.to_string()))?;
        let source = next()?.to_string();
        Ok(Beacon {
            pkg,
            atk,
            con,
            ver,
            kid,
            received_at,
            source,
        })
    }
}

/// One experiment the receiver knows about: which package is under test,
/// which versions, and the content digests planted for digest matching.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Experiment {
    pub pkg: String,
    pub versions: Vec<String>,
    /// Expected sha256 (hex) of the stolen content, keyed by attack id.
    pub expected_digests: BTreeMap<u8, String>,
    /// Paper-style receipt-only validation: any non-empty `con` counts.
    pub receipt_only: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps a key id to the experiments running under it, one per package.
#[derive(Debug, Default)]
pub struct ExperimentRegistry {
    inner: Mutex<HashMap<String, HashMap<String, Experiment>>>,
}

impl ExperimentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, kid: &str, experiment: Experiment) {
        self.inner
            .lock()
            .unwrap()
            .entry(kid.to_string())
            .or_default()
            .insert(experiment.pkg.clone(), experiment);
    }

    pub fn get(&self, kid: &str, pkg: &str) -> Option<Experiment> {
        self.inner
            .lock()
            .unwrap()
            .get(kid)
            .and_then(|m| m.get(pkg))
            .cloned()
    }

    pub fn packages(&self, kid: &str) -> Vec<String> {
        self.inner
            .lock()
            .unwrap()
            .get(kid)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn contains(&self, kid: &str) -> bool {
        self.inner.lock().unwrap().contains_key(kid)
    }
}

#[derive(Default)]
struct StoreInner {
    beacons: Vec<Beacon>,
    quarantine: Vec<Beacon>,
}

/// Append-only beacon store with optional on-disk logs, one
/// `beacons-<kid>.log` per experiment.
#[derive(Default)]
pub struct BeaconStore {
    inner: Mutex<StoreInner>,
    log_dir: Option<PathBuf>,
}

impl BeaconStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_log_dir(dir: PathBuf) -> Self {
        BeaconStore {
            inner: Mutex::default(),
            log_dir: Some(dir),
        }
    }

    pub fn record(&self, beacon: Beacon, known_kid: bool) {
        if let Some(dir) = &self.log_dir {
            if known_kid {
                let path = dir.join(format!("beacons-{}.log", beacon.kid));
                if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path)
                {
                    let _ = writeln!(f, "{}", beacon.to_log_line());
                }
            }
        }
        let mut inner = self.inner.lock().unwrap();
        if known_kid {
            inner.beacons.push(beacon);
        } else {
            inner.quarantine.push(beacon);
        }
    }

    pub fn snapshot(&self) -> Vec<Beacon> {
        self.inner.lock().unwrap().beacons.clone()
    }

    pub fn quarantined(&self) -> Vec<Beacon> {
        self.inner.lock().unwrap().quarantine.clone()
    }
}

/// A running receiver endpoint.
pub struct ReceiverHandle {
    pub addr: SocketAddr,
    pub store: Arc<BeaconStore>,
    pub registry: Arc<ExperimentRegistry>,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ReceiverHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_listener();
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }

    fn stop_listener(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
    }
}

impl Drop for ReceiverHandle {
    fn drop(&mut self) {
        self.stop_listener();
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

/// Bind and serve `GET /req` beacons until shutdown. Unknown key ids are
/// quarantined but still answered `200 ok` so the client learns nothing.
pub fn serve(
    bind: &str,
    registry: Arc<ExperimentRegistry>,
    store: Arc<BeaconStore>,
) -> Result<ReceiverHandle, ReceiverError> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let join = {
        let stop = stop.clone();
        let registry = registry.clone();
        let store = store.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let registry = registry.clone();
                let store = store.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &registry, &store);
                });
            }
        })
    };
    Ok(ReceiverHandle {
        addr,
        store,
        registry,
        stop,
        join: Some(join),
    })
}

fn handle_connection(
    mut stream: TcpStream,
    registry: &ExperimentRegistry,
    store: &BeaconStore,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "unknown".into());
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    // drain headers
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }

    let (status, body) = route(&request_line, &peer, registry, store);
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())?;
    Ok(())
}

fn route(
    request_line: &str,
    peer: &str,
    registry: &ExperimentRegistry,
    store: &BeaconStore,
) -> (&'static str, &'static str) {
    let mut parts = request_line.split_whitespace();
    let (Some(method), Some(target)) = (parts.next(), parts.next()) else {
        return ("400 Bad Request", "bad request");
    };
    if method != "GET" {
        return ("405 Method Not Allowed", "method not allowed");
    }
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p, q),
        None => (target, ""),
    };
    if path != "/req" {
        return ("404 Not Found", "not found");
    }
    if query.len() > MAX_QUERY_BYTES {
        return ("414 URI Too Long", "query too long");
    }
    match parse_beacon_query(query, peer) {
        Some(beacon) => {
            let known = registry.contains(&beacon.kid);
            store.record(beacon, known);
            ("200 OK", "ok")
        }
        None => ("400 Bad Request", "bad query"),
    }
}

/// Parse the five wire parameters. All of `pkg`, `atk`, `con`, `ver` and
/// `kid` must be present (order-insensitive); `atk` must be 1..=7.
pub fn parse_beacon_query(query: &str, source: &str) -> Option<Beacon> {
    let mut params: HashMap<&str, String> = HashMap::new();
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        params
            .entry(k)
            .or_insert_with(|| percent_decode_str(v).decode_utf8_lossy().into_owned());
    }
    let pkg = params.get("pkg")?.clone();
    let atk: u8 = params.get("atk")?.parse().ok()?;
    AttackId::from_number(atk)?;
    let con = params.get("con")?.clone();
    let ver = params.get("ver")?.clone();
    let kid = params.get("kid")?.clone();
    if pkg.is_empty() || kid.is_empty() {
        return None;
    }
    Some(Beacon {
        pkg,
        atk,
        con,
        ver,
        kid,
        received_at: now_millis(),
        source: source.to_string(),
    })
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Minimal HTTP/1.1 GET used for beacon emission; returns the status code.
pub fn http_get(url: &str) -> std::io::Result<u16> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "not http"))?;
    let (host, path) = match rest.split_once('/') {
        Some((h, p)) => (h, format!("/{p}")),
        None => (rest, "/".to_string()),
    };
    let addr = if host.contains(':') {
        host.to_string()
    } else {
        format!("{host}:80")
    };
    let mut stream = TcpStream::connect_timeout(
        &addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address"))?,
        Duration::from_secs(5),
    )?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n"
    )?;
    let mut response = String::new();
    BufReader::new(stream).read_to_string(&mut response)?;
    let status = response
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad response"))?;
    Ok(status)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// No beacon (or download) materialized before the collection closed.
    NoResponse,
    NotVulnerable,
    Vulnerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Beacon(Beacon),
    /// Path of the auto-downloaded file found on the SD card (A1).
    Download(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub pkg: String,
    pub attack: AttackId,
    pub ver: String,
    pub outcome: Outcome,
    pub evidence: Option<Evidence>,
}

/// Capability facts derived from the characterization probes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFacts {
    pub file_support_sd: Option<bool>,
    pub file_support_private: Option<bool>,
    pub js_in_file: Option<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct Adjudication {
    pub verdicts: Vec<AttackVerdict>,
    /// Probe facts keyed by (pkg, ver).
    pub facts: BTreeMap<(String, String), ProbeFacts>,
    /// Human-readable inconsistency warnings (conflicting beacons).
    pub warnings: Vec<String>,
}

/// Convert collected beacons into verdicts for the experiment registered
/// under `kid`. Beacons from other experiments never participate.
///
/// A2/A3/A4 are vulnerable iff a beacon carries non-empty content that
/// matches the planted digest (or any non-empty content in receipt-only
/// mode). A beacon that arrived but failed the content check is a
/// definitive negative. Probe beacons become capability facts, with
/// `con == "reqflag"` meaning the capability is present. A1 verdicts come
/// from the backend download check, not from beacons.
pub fn adjudicate(
    beacons: &[Beacon],
    kid: &str,
    pkg: &str,
    registry: &ExperimentRegistry,
) -> Adjudication {
    let Some(exp) = registry.get(kid, pkg) else {
        return Adjudication::default();
    };
    let mut out = Adjudication::default();
    let relevant: Vec<&Beacon> = beacons
        .iter()
        .filter(|b| b.kid == kid && b.pkg == exp.pkg)
        .collect();

    for ver in &exp.versions {
        for attack in [AttackId::A2, AttackId::A3, AttackId::A4] {
            let hits: Vec<&&Beacon> = relevant
                .iter()
                .filter(|b| b.atk == attack.number() && b.ver == *ver)
                .collect();
            let qualifies = |b: &Beacon| -> bool {
                if b.con.is_empty() {
                    return false;
                }
                match exp.expected_digests.get(&attack.number()) {
                    Some(digest) if !exp.receipt_only => {
                        sha256_hex(b.con.as_bytes()) == *digest
                    }
                    _ => true,
                }
            };
            let winner = hits.iter().find(|b| qualifies(b));
            let outcome = if let Some(b) = winner {
                let distinct: BTreeSet<&str> = hits.iter().map(|b| b.con.as_str()).collect();
                if distinct.len() > 1 {
                    out.warnings.push(format!(
                        "conflicting beacons for {} {} on {}: {} distinct contents, keeping vulnerable",
                        exp.pkg, attack, ver, distinct.len()
                    ));
                }
                out.verdicts.push(AttackVerdict {
                    pkg: exp.pkg.clone(),
                    attack,
                    ver: ver.clone(),
                    outcome: Outcome::Vulnerable,
                    evidence: Some(Evidence::Beacon((**b).clone())),
                });
                continue;
            } else if hits.is_empty() {
                Outcome::NoResponse
            } else {
                Outcome::NotVulnerable
            };
            out.verdicts.push(AttackVerdict {
                pkg: exp.pkg.clone(),
                attack,
                ver: ver.clone(),
                outcome,
                evidence: None,
            });
        }

        let mut facts = ProbeFacts::default();
        for b in &relevant {
            if b.ver != *ver {
                continue;
            }
            let flag = Some(b.con == crate::forge::REQFLAG);
            match AttackId::from_number(b.atk) {
                Some(AttackId::ProbeFileSd) => {
                    facts.file_support_sd = merge_fact(facts.file_support_sd, flag)
                }
                Some(AttackId::ProbeFilePrivate) => {
                    facts.file_support_private = merge_fact(facts.file_support_private, flag)
                }
                Some(AttackId::ProbeJs) => facts.js_in_file = merge_fact(facts.js_in_file, flag),
                _ => {}
            }
        }
        out.facts.insert((exp.pkg.clone(), ver.clone()), facts);
    }
    out
}

// A positive probe observation wins over a negative one (the noscript
// branch of the JS probe reports false; the scripted branch true).
fn merge_fact(current: Option<bool>, incoming: Option<bool>) -> Option<bool> {
    match (current, incoming) {
        (Some(true), _) => Some(true),
        (_, v @ Some(true)) => v,
        (Some(false), _) => Some(false),
        (None, v) => v,
    }
}
