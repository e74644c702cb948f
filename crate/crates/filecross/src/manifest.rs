//! Decoded Android manifest model: activities, their intent filters, and
//! the auxiliary facts we infer from them (exposure intention, custom web
//! engine presence).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const ACTION_VIEW: &str = "android.intent.action.VIEW";
pub const ACTION_MAIN: &str = "android.intent.action.MAIN";
pub const CATEGORY_BROWSABLE: &str = "android.intent.category.BROWSABLE";
pub const CATEGORY_LAUNCHER: &str = "android.intent.category.LAUNCHER";

/// Shared-library names known to carry a custom (non-system) web engine.
pub const DEFAULT_ENGINE_LIBS: &[&str] = &[
    "libchromeview.so",
    "libmozglue.so",
    "libdolphinwebcore.so",
    "libom.so",
    "libWebCore_UC.so",
    "libzeus.so",
    "libmttwebcore.so",
    "libchromeview.z.so",
    "libsogouwebcore.so",
    "libchromiumkit.so",
    "libxul.so",
];

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed XML at line {line}: {message}")]
    Parse { line: u32, message: String },
    #[error("structural error: {0}")]
    Structural(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub package_name: String,
    pub components: Vec<ManifestComponent>,
    #[serde(default)]
    pub native_libs: Vec<String>,
    #[serde(default)]
    pub dex_strings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exported {
    True,
    False,
    Unset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Activity,
    /// An `activity-alias`; carries the resolved target activity name.
    ActivityAlias { target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestComponent {
    /// Fully qualified component name.
    pub name: String,
    pub kind: ComponentKind,
    pub exported: Exported,
    pub filters: Vec<IntentFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntentFilter {
    pub actions: BTreeSet<String>,
    pub categories: BTreeSet<String>,
    /// Schemes collected from `data` elements.
    pub schemes: BTreeSet<String>,
}

impl IntentFilter {
    /// True when the declared action matches `short` either exactly or as
    /// the standard fully-qualified `android.intent.action.*` name.
    pub fn has_action(&self, short: &str) -> bool {
        let full = format!("android.intent.action.{short}");
        self.actions.contains(short) || self.actions.contains(&full)
    }

    pub fn has_category(&self, short: &str) -> bool {
        let full = format!("android.intent.category.{short}");
        self.categories.contains(short) || self.categories.contains(&full)
    }

    /// VIEW + BROWSABLE: the reference pattern for a browsing interface.
    pub fn is_view_browsable(&self) -> bool {
        self.has_action("VIEW") && self.has_category("BROWSABLE")
    }

    pub fn is_main_launcher(&self) -> bool {
        self.has_action("MAIN") && self.has_category("LAUNCHER")
    }
}

impl ManifestComponent {
    pub fn has_view_browsable(&self) -> bool {
        self.filters.iter().any(IntentFilter::is_view_browsable)
    }

    pub fn has_main_launcher(&self) -> bool {
        self.filters.iter().any(IntentFilter::is_main_launcher)
    }
}

/// How a component is reachable from other apps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureClass {
    Intentional,
    Unintentional,
    NotExposed,
}

impl std::fmt::Display for ExposureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExposureClass::Intentional => "intentional",
            ExposureClass::Unintentional => "unintentional",
            ExposureClass::NotExposed => "not_exposed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineGuess {
    Default,
    Custom { evidence: String },
}

impl EngineGuess {
    pub fn is_custom(&self) -> bool {
        matches!(self, EngineGuess::Custom { .. })
    }
}

/// Parse a decoded (textual) manifest into the component model.
///
/// Only the elements of the supported grammar are interpreted; unknown
/// elements and attributes are skipped.
pub fn parse_manifest(text: &str) -> Result<ManifestDoc, ManifestError> {
    // Decoded manifests do not always declare the android namespace;
    // inject it (newline-free, so error line numbers stay accurate).
    let patched;
    let text = if text.contains("xmlns:android") {
        text
    } else {
        match text.find("<manifest") {
            Some(i) => {
                let at = i + "<manifest".len();
                patched = format!(
                    "{} xmlns:android=\"http://schemas.android.com/apk/res/android\"{}",
                    &text[..at],
                    &text[at..]
                );
                &patched
            }
            None => text,
        }
    };
    let doc = roxmltree::Document::parse(text).map_err(|e| ManifestError::Parse {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "manifest" {
        return Err(ManifestError::Structural(format!(
            "root element is `{}`, expected `manifest`",
            root.tag_name().name()
        )));
    }
    let package = root
        .attribute("package")
        .filter(|p| !p.is_empty())
        .ok_or_else(|| {
            ManifestError::Structural("missing `package` attribute on <manifest>".into())
        })?
        .to_string();

    let mut components = Vec::new();
    for node in root.descendants().filter(|n| n.is_element()) {
        let kind = match node.tag_name().name() {
            "activity" => ComponentKind::Activity,
            "activity-alias" => {
                let target = android_attr(node, "targetActivity").ok_or_else(|| {
                    ManifestError::Structural(
                        "activity-alias without android:targetActivity".into(),
                    )
                })?;
                ComponentKind::ActivityAlias {
                    target: qualify(&package, &target),
                }
            }
            _ => continue,
        };
        let name = android_attr(node, "name").ok_or_else(|| {
            ManifestError::Structural(format!(
                "<{}> without android:name",
                node.tag_name().name()
            ))
        })?;
        let exported = match android_attr(node, "exported").as_deref() {
            Some("true") => Exported::True,
            Some("false") => Exported::False,
            _ => Exported::Unset,
        };
        let mut filters = Vec::new();
        for filter_node in node
            .children()
            .filter(|n| n.is_element() && n.tag_name().name() == "intent-filter")
        {
            let mut filter = IntentFilter::default();
            for item in filter_node.children().filter(|n| n.is_element()) {
                match item.tag_name().name() {
                    "action" => {
                        if let Some(v) = android_attr(item, "name") {
                            filter.actions.insert(v);
                        }
                    }
                    "category" => {
                        if let Some(v) = android_attr(item, "name") {
                            filter.categories.insert(v);
                        }
                    }
                    "data" => {
                        if let Some(v) = android_attr(item, "scheme") {
                            filter.schemes.insert(v);
                        }
                    }
                    _ => {}
                }
            }
            filters.push(filter);
        }
        components.push(ManifestComponent {
            name: qualify(&package, &name),
            kind,
            exported,
            filters,
        });
    }

    let mut seen = BTreeSet::new();
    for c in &components {
        if !seen.insert(c.name.as_str()) {
            return Err(ManifestError::Structural(format!(
                "duplicate component name `{}`",
                c.name
            )));
        }
    }

    Ok(ManifestDoc {
        package_name: package,
        components,
        native_libs: Vec::new(),
        dex_strings: Vec::new(),
    })
}

/// Resolve `.Relative` and bare class names against the package.
fn qualify(package: &str, name: &str) -> String {
    if let Some(rest) = name.strip_prefix('.') {
        format!("{package}.{rest}")
    } else if name.contains('.') {
        name.to_string()
    } else {
        format!("{package}.{name}")
    }
}

fn android_attr(node: roxmltree::Node<'_, '_>, local: &str) -> Option<String> {
    node.attributes()
        .find(|a| a.name() == local)
        .map(|a| a.value().to_string())
}

/// Serialize the model back to the manifest grammar. `parse_manifest` on
/// the output yields an equal model (modulo optional dex/lib fields, which
/// are not part of the XML).
pub fn to_xml(doc: &ManifestDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<manifest xmlns:android=\"http://schemas.android.com/apk/res/android\" package=\"{}\">",
        xml_escape(&doc.package_name)
    );
    out.push_str("  <application>\n");
    for c in &doc.components {
        let tag = match &c.kind {
            ComponentKind::Activity => "activity".to_string(),
            ComponentKind::ActivityAlias { target } => format!(
                "activity-alias android:targetActivity=\"{}\"",
                xml_escape(target)
            ),
        };
        let exported = match c.exported {
            Exported::True => " android:exported=\"true\"",
            Exported::False => " android:exported=\"false\"",
            Exported::Unset => "",
        };
        let _ = write!(
            out,
            "    <{tag} android:name=\"{}\"{exported}",
            xml_escape(&c.name)
        );
        if c.filters.is_empty() {
            out.push_str("/>\n");
        } else {
            out.push_str(">\n");
            for f in &c.filters {
                out.push_str("      <intent-filter>\n");
                for a in &f.actions {
                    let _ = writeln!(out, "        <action android:name=\"{}\"/>", xml_escape(a));
                }
                for cat in &f.categories {
                    let _ = writeln!(
                        out,
                        "        <category android:name=\"{}\"/>",
                        xml_escape(cat)
                    );
                }
                for s in &f.schemes {
                    let _ = writeln!(out, "        <data android:scheme=\"{}\"/>", xml_escape(s));
                }
                out.push_str("      </intent-filter>\n");
            }
            let close = match c.kind {
                ComponentKind::Activity => "activity",
                ComponentKind::ActivityAlias { .. } => "activity-alias",
            };
            let _ = writeln!(out, "    </{close}>");
        }
    }
    out.push_str("  </application>\n</manifest>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Infer whether the browser embeds its own web engine: a dex string
/// matching `native.*loadUrl`, or a shared-library name on the known
/// engine list.
pub fn infer_custom_engine(doc: &ManifestDoc, engine_libs: &[String]) -> EngineGuess {
    // The pattern is fixed; compilation cannot fail.
    let native_load_url = Regex::new("native.*loadUrl").unwrap();
    for s in &doc.dex_strings {
        if native_load_url.is_match(s) {
            return EngineGuess::Custom { evidence: s.clone() };
        }
    }
    for lib in &doc.native_libs {
        if engine_libs.iter().any(|known| known == lib) {
            return EngineGuess::Custom {
                evidence: lib.clone(),
            };
        }
    }
    EngineGuess::Default
}

/// Parse an engine-name list: one library filename per line, `#` comments.
pub fn parse_engine_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn default_engine_libs() -> Vec<String> {
    DEFAULT_ENGINE_LIBS.iter().map(|s| s.to_string()).collect()
}

/// Classify how (or whether) a component is exposed to other apps.
///
/// VIEW+BROWSABLE marks an intentional browsing interface. A component
/// that is merely exported, or carries MAIN+LAUNCHER, is exposed without
/// declaring browsing intent. `exported` left unset with at least one
/// filter follows the pre-Android-12 default of exposed.
pub fn classify_exposure(component: &ManifestComponent) -> ExposureClass {
    if component.has_view_browsable() {
        return ExposureClass::Intentional;
    }
    let implicitly_exposed = component.exported == Exported::True
        || component.has_main_launcher()
        || (component.exported == Exported::Unset && !component.filters.is_empty());
    if implicitly_exposed {
        ExposureClass::Unintentional
    } else {
        ExposureClass::NotExposed
    }
}
