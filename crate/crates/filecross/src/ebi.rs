//! Six-bit scoring of exposed-browsing-interface patterns and selection
//! of the component to attack.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{ManifestComponent, ManifestDoc};

/// One scoring bit. The numeric value is the bit's weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbiBit {
    /// Bit 0: only the MAIN+LAUNCHER pattern, no VIEW+BROWSABLE filter.
    LauncherOnly = 1,
    /// Bit 1: a VIEW+BROWSABLE filter whose scheme set is exactly {file}.
    FileOnlyBrowsable = 2,
    /// Bit 2: the reference pattern — VIEW+BROWSABLE not restricted to file.
    Reference = 4,
    /// Bit 3: a VIEW+BROWSABLE filter declaring the http scheme.
    Http = 8,
    /// Bit 4: a VIEW+BROWSABLE filter declaring the https scheme.
    Https = 16,
    /// Bit 5: both VIEW+BROWSABLE and MAIN+LAUNCHER filters present.
    LauncherWithBrowsable = 32,
}

pub const ALL_BITS: [EbiBit; 6] = [
    EbiBit::LauncherOnly,
    EbiBit::FileOnlyBrowsable,
    EbiBit::Reference,
    EbiBit::Http,
    EbiBit::Https,
    EbiBit::LauncherWithBrowsable,
];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EbiScore {
    pub value: u32,
    pub bits: Vec<EbiBit>,
}

impl EbiScore {
    fn from_bits(bits: Vec<EbiBit>) -> Self {
        let value = bits.iter().map(|b| *b as u32).sum();
        EbiScore { value, bits }
    }

    pub fn has(&self, bit: EbiBit) -> bool {
        self.bits.contains(&bit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EbiSelection {
    /// None iff every component scores zero.
    pub component_name: Option<String>,
    pub score: EbiScore,
    /// All components sharing the maximal score, in declaration order.
    pub ties: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    FirstDeclared,
    SeededRandom(u64),
}

/// Score one component against the EBI bit table. Schemes are aggregated
/// per filter; bits are unioned over the component's filters.
pub fn score_component(component: &ManifestComponent) -> EbiScore {
    let mut bits = Vec::new();
    let has_vb = component.has_view_browsable();
    let has_ml = component.has_main_launcher();

    let mut reference = false;
    let mut file_only = false;
    let mut http = false;
    let mut https = false;
    for f in component.filters.iter().filter(|f| f.is_view_browsable()) {
        let schemes = &f.schemes;
        let is_file_only = schemes.len() == 1 && schemes.contains("file");
        if is_file_only {
            file_only = true;
        } else if schemes.is_empty()
            || schemes.contains("http")
            || schemes.contains("https")
        {
            reference = true;
        }
        if schemes.contains("http") {
            http = true;
        }
        if schemes.contains("https") {
            https = true;
        }
    }

    if has_ml && !has_vb {
        bits.push(EbiBit::LauncherOnly);
    }
    if file_only {
        bits.push(EbiBit::FileOnlyBrowsable);
    }
    if reference {
        bits.push(EbiBit::Reference);
    }
    if http {
        bits.push(EbiBit::Http);
    }
    if https {
        bits.push(EbiBit::Https);
    }
    if has_vb && has_ml {
        bits.push(EbiBit::LauncherWithBrowsable);
    }
    EbiScore::from_bits(bits)
}

/// Pick the maximal-score component as the EBI. Ties are resolved by
/// `tie_break`; a document where everything scores zero has no EBI.
pub fn select_ebi(doc: &ManifestDoc, tie_break: TieBreak) -> EbiSelection {
    let scored: Vec<(&ManifestComponent, EbiScore)> = doc
        .components
        .iter()
        .map(|c| (c, score_component(c)))
        .collect();
    let max = scored.iter().map(|(_, s)| s.value).max().unwrap_or(0);
    if max == 0 {
        return EbiSelection {
            component_name: None,
            score: EbiScore::default(),
            ties: Vec::new(),
        };
    }
    let ties: Vec<&ManifestComponent> = scored
        .iter()
        .filter(|(_, s)| s.value == max)
        .map(|(c, _)| *c)
        .collect();
    let tie_names: Vec<String> = ties.iter().map(|c| c.name.clone()).collect();
    let chosen = match tie_break {
        TieBreak::FirstDeclared => ties[0],
        TieBreak::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ties.choose(&mut rng).unwrap()
        }
    };
    EbiSelection {
        component_name: Some(chosen.name.clone()),
        score: score_component(chosen),
        ties: tie_names,
    }
}
