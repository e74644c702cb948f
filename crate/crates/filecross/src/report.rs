//! Turns merged run records into the vulnerability matrix, aggregate
//! counts, and exportable tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::commander::RunRecord;
use crate::forge::AttackId;
use crate::manifest::ExposureClass;
use crate::receiver::Outcome;
use crate::version::Version;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv parse error: {0}")]
    Csv(String),
}

/// One displayed matrix cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Y,
    N,
    Blank,
}

impl Cell {
    fn from_outcome(outcome: Outcome) -> Cell {
        match outcome {
            Outcome::Vulnerable => Cell::Y,
            Outcome::NotVulnerable => Cell::N,
            Outcome::NoResponse => Cell::Blank,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Cell::Y => "y",
            Cell::N => "n",
            Cell::Blank => "",
        }
    }

    fn parse(s: &str) -> Result<Cell, ReportError> {
        match s {
            "y" => Ok(Cell::Y),
            "n" => Ok(Cell::N),
            "" => Ok(Cell::Blank),
            other => Err(ReportError::Csv(format!("bad cell `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub package: String,
    /// A1 is version-independent in the display: unioned over versions.
    pub a1: Cell,
    /// (version, cell) pairs in version order.
    pub a2: Vec<(String, Cell)>,
    pub a3: Vec<(String, Cell)>,
    /// A4 results are not differentiated by version: unioned.
    pub a4: Cell,
    pub exposure: ExposureClass,
    pub engine: String,
    /// Capability facts carried for the aggregate breakdowns; not part
    /// of the CSV schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_support_sd: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_support_private: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub js_in_file: Option<bool>,
}

impl MatrixRow {
    pub fn is_vulnerable(&self) -> bool {
        self.a1 == Cell::Y
            || self.a4 == Cell::Y
            || self.a2.iter().chain(&self.a3).any(|(_, c)| *c == Cell::Y)
    }

    pub fn y_count(&self) -> usize {
        [self.a1, self.a4]
            .iter()
            .filter(|c| **c == Cell::Y)
            .count()
            + self
                .a2
                .iter()
                .chain(&self.a3)
                .filter(|(_, c)| *c == Cell::Y)
                .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnMatrix {
    /// Device versions the per-version columns cover, in order.
    pub versions: Vec<String>,
    /// Sorted by package name.
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EbiBreakdown {
    pub intentional: usize,
    pub unintentional: usize,
    pub none: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub total: usize,
    pub vulnerable: usize,
    /// Total y cells across the matrix.
    pub issues: usize,
    /// y counts keyed by (attack, version); version is "*" for the
    /// version-independent A1/A4 columns.
    pub per_attack: BTreeMap<(String, String), usize>,
    pub ebi: EbiBreakdown,
    pub file_support_sd: usize,
    pub file_support_private: usize,
    pub js_in_file: usize,
}

fn union_cell(a: Cell, b: Cell) -> Cell {
    match (a, b) {
        (Cell::Y, _) | (_, Cell::Y) => Cell::Y,
        (Cell::N, _) | (_, Cell::N) => Cell::N,
        _ => Cell::Blank,
    }
}

/// Build the display matrix from a merged record. Per-version A1 and A4
/// verdicts are collapsed into single columns; A2 and A3 keep a column
/// per device version.
pub fn build_matrix(merged: &RunRecord) -> VulnMatrix {
    let mut versions: Vec<String> = merged.rows.iter().map(|r| r.ver.clone()).collect();
    versions.sort_by_key(|v| v.parse::<Version>().ok());
    versions.dedup();

    let mut packages: Vec<String> = merged.rows.iter().map(|r| r.pkg.clone()).collect();
    packages.sort();
    packages.dedup();

    let mut rows = Vec::new();
    for pkg in packages {
        let pkg_rows: Vec<_> = merged.rows.iter().filter(|r| r.pkg == pkg).collect();
        let cell = |attack: AttackId, ver: &str| -> Cell {
            pkg_rows
                .iter()
                .filter(|r| r.ver == ver)
                .flat_map(|r| r.verdicts.iter())
                .find(|v| v.attack == attack)
                .map(|v| Cell::from_outcome(v.outcome))
                .unwrap_or(Cell::Blank)
        };
        let collapsed = |attack: AttackId| -> Cell {
            versions
                .iter()
                .map(|v| cell(attack, v))
                .fold(Cell::Blank, union_cell)
        };
        let facts = &pkg_rows[0].facts;
        rows.push(MatrixRow {
            package: pkg.clone(),
            a1: collapsed(AttackId::A1),
            a2: versions.iter().map(|v| (v.clone(), cell(AttackId::A2, v))).collect(),
            a3: versions.iter().map(|v| (v.clone(), cell(AttackId::A3, v))).collect(),
            a4: collapsed(AttackId::A4),
            exposure: facts.exposure_class,
            engine: if facts.engine_guess.is_custom() {
                "custom".into()
            } else {
                "default".into()
            },
            file_support_sd: merge_fact(&pkg_rows, |f| f.file_support_sd),
            file_support_private: merge_fact(&pkg_rows, |f| f.file_support_private),
            js_in_file: merge_fact(&pkg_rows, |f| f.js_in_file),
        });
    }
    VulnMatrix { versions, rows }
}

fn merge_fact(
    rows: &[&crate::commander::PackageVersionResult],
    pick: impl Fn(&crate::commander::CapabilityFacts) -> Option<bool>,
) -> Option<bool> {
    rows.iter().fold(None, |acc, r| match (acc, pick(&r.facts)) {
        (Some(true), _) | (_, Some(true)) => Some(true),
        (Some(false), _) | (_, Some(false)) => Some(false),
        _ => None,
    })
}

/// Recompute every aggregate from the matrix alone.
pub fn compute_stats(matrix: &VulnMatrix) -> AggregateStats {
    let mut stats = AggregateStats {
        total: matrix.rows.len(),
        ..AggregateStats::default()
    };
    for row in &matrix.rows {
        if row.is_vulnerable() {
            stats.vulnerable += 1;
        }
        stats.issues += row.y_count();
        if row.a1 == Cell::Y {
            *stats.per_attack.entry(("A1".into(), "*".into())).or_default() += 1;
        }
        if row.a4 == Cell::Y {
            *stats.per_attack.entry(("A4".into(), "*".into())).or_default() += 1;
        }
        for (name, cells) in [("A2", &row.a2), ("A3", &row.a3)] {
            for (ver, cell) in cells {
                if *cell == Cell::Y {
                    *stats
                        .per_attack
                        .entry((name.into(), ver.clone()))
                        .or_default() += 1;
                }
            }
        }
        match row.exposure {
            ExposureClass::Intentional => stats.ebi.intentional += 1,
            ExposureClass::Unintentional => stats.ebi.unintentional += 1,
            ExposureClass::NotExposed => stats.ebi.none += 1,
        }
        if row.file_support_sd == Some(true) {
            stats.file_support_sd += 1;
        }
        if row.file_support_private == Some(true) {
            stats.file_support_private += 1;
        }
        if row.js_in_file == Some(true) {
            stats.js_in_file += 1;
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    TextTable,
    Csv,
}

pub fn csv_header(versions: &[String]) -> Vec<String> {
    let mut cols = vec!["package".to_string(), "A1".to_string()];
    for v in versions {
        cols.push(format!("A2_{v}"));
    }
    for v in versions {
        cols.push(format!("A3_{v}"));
    }
    cols.push("A4".into());
    cols.push("exposure".into());
    cols.push("engine".into());
    cols
}

fn row_fields(row: &MatrixRow) -> Vec<String> {
    let mut fields = vec![row.package.clone(), row.a1.as_str().to_string()];
    fields.extend(row.a2.iter().map(|(_, c)| c.as_str().to_string()));
    fields.extend(row.a3.iter().map(|(_, c)| c.as_str().to_string()));
    fields.push(row.a4.as_str().to_string());
    fields.push(row.exposure.to_string());
    fields.push(row.engine.clone());
    fields
}

pub fn summary_line(stats: &AggregateStats) -> String {
    let pct = if stats.total == 0 {
        0.0
    } else {
        100.0 * stats.vulnerable as f64 / stats.total as f64
    };
    format!(
        "{} of {} browsers vulnerable ({:.0}%)",
        stats.vulnerable, stats.total, pct
    )
}

pub fn emit(matrix: &VulnMatrix, stats: &AggregateStats, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "{}", csv_header(&matrix.versions).join(","));
            for row in &matrix.rows {
                let _ = writeln!(out, "{}", row_fields(row).join(","));
            }
            out
        }
        Format::TextTable => {
            let header = csv_header(&matrix.versions);
            let mut table: Vec<Vec<String>> = vec![header];
            table.extend(matrix.rows.iter().map(row_fields));
            let cols = table[0].len();
            let widths: Vec<usize> = (0..cols)
                .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            for row in &table {
                let line: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .map(|(cell, w)| format!("{cell:<w$}"))
                    .collect();
                let _ = writeln!(out, "{}", line.join("  ").trim_end());
            }
            let _ = writeln!(out);
            let _ = writeln!(out, "{}", summary_line(stats));
            let _ = writeln!(out, "issues: {}", stats.issues);
            let _ = writeln!(
                out,
                "exposure: intentional {} / unintentional {} / none {}",
                stats.ebi.intentional, stats.ebi.unintentional, stats.ebi.none
            );
            out
        }
    }
}

/// Parse a matrix back from its CSV form. Capability facts are not part
/// of the CSV schema and come back as unknown.
pub fn parse_csv(text: &str) -> Result<VulnMatrix, ReportError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ReportError::Csv("empty input".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[0] != "package" || cols[1] != "A1" {
        return Err(ReportError::Csv(format!("bad header `{header}`")));
    }
    let versions: Vec<String> = cols
        .iter()
        .filter_map(|c| c.strip_prefix("A2_"))
        .map(str::to_string)
        .collect();
    let expected = csv_header(&versions);
    if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(ReportError::Csv(format!("bad header `{header}`")));
    }
    let n = versions.len();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.len() {
            return Err(ReportError::Csv(format!(
                "expected {} fields, got {} in `{line}`",
                expected.len(),
                fields.len()
            )));
        }
        let exposure = match fields[2 + 2 * n + 1] {
            "intentional" => ExposureClass::Intentional,
            "unintentional" => ExposureClass::Unintentional,
            "not_exposed" => ExposureClass::NotExposed,
            other => return Err(ReportError::Csv(format!("bad exposure `{other}`"))),
        };
        rows.push(MatrixRow {
            package: fields[0].to_string(),
            a1: Cell::parse(fields[1])?,
            a2: versions
                .iter()
                .enumerate()
                .map(|(i, v)| Ok((v.clone(), Cell::parse(fields[2 + i])?)))
                .collect::<Result<_, ReportError>>()?,
            a3: versions
                .iter()
                .enumerate()
                .map(|(i, v)| Ok((v.clone(), Cell::parse(fields[2 + n + i])?)))
                .collect::<Result<_, ReportError>>()?,
            a4: Cell::parse(fields[2 + 2 * n])?,
            exposure,
            engine: fields[2 + 2 * n + 2].to_string(),
            file_support_sd: None,
            file_support_private: None,
            js_in_file: None,
        });
    }
    Ok(VulnMatrix { versions, rows })
}
