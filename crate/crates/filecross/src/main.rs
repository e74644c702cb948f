use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use filecross::commander::{
    run_suite, union_runs, validate_patch, write_run_log, RunConfig, Transition,
};
use filecross::ebi::{score_component, select_ebi, TieBreak};
use filecross::forge::{forge, AttackId, AttackSpec};
use filecross::manifest::{classify_exposure, parse_manifest};
use filecross::receiver::{serve, BeaconStore, Experiment, ExperimentRegistry};
use filecross::report::{build_matrix, compute_stats, emit, Format};
use filecross::sandbox::load_profile;
use filecross::version::Version;

#[derive(Parser)]
#[command(name = "filecross", about = "file:// attack testing harness for browser apps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Score a manifest's components and pick the browsing interface.
    Score {
        /// Path to an AndroidManifest.xml
        manifest: PathBuf,
        /// Seed for random tie-breaking; ties go to the first declared
        /// component when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the beacon receiver until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8077")]
        bind: String,
        /// Key id to accept.
        #[arg(long)]
        kid: String,
        /// Packages to accept beacons for (receipt-only validation).
        #[arg(long = "pkg")]
        packages: Vec<String>,
        /// Directory for beacon logs.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Run the full attack suite against a corpus of browser profiles.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Device versions, e.g. 4.0,4.3,4.4
        #[arg(long, value_delimiter = ',')]
        versions: Vec<Version>,
        #[arg(long, default_value_t = 3)]
        runs: u32,
        /// Collection window in virtual milliseconds.
        #[arg(long, default_value_t = 12000)]
        timeout: u64,
        #[arg(long, default_value = "local")]
        kid: String,
        /// Directory for result logs.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Accept any non-empty beacon instead of digest matching.
        #[arg(long)]
        receipt_only: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Union run logs into one merged log.
    Merge {
        /// results-<kid>-run<i>.log files
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value = "merged")]
        kid: String,
    },
    /// Print the vulnerability matrix from a merged log.
    Report {
        /// A results log (normally the union log).
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Compare pre-patch and post-patch profiles attack by attack.
    ValidatePatch {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: u32,
    },
    /// Dump a forged payload for inspection.
    Forge {
        /// Attack number 1-7.
        #[arg(long)]
        attack: u8,
        #[arg(long)]
        pkg: String,
        /// Target file path inside the victim's private zone.
        #[arg(long)]
        target: Option<String>,
        /// Remote origin for the cross-protocol attack.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long, default_value = "4.0")]
        ver: Version,
        #[arg(long, default_value = "debug")]
        kid: String,
        #[arg(long, default_value = "http://127.0.0.1:8077")]
        receiver_base: String,
    },
}

fn state_dir_override() -> Option<PathBuf> {
    std::env::var_os("FILECROSS_STATE_DIR").map(PathBuf::from)
}

fn to_format(f: OutputFormat) -> Format {
    match f {
        OutputFormat::Text => Format::TextTable,
        OutputFormat::Csv => Format::Csv,
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Score { manifest, seed } => {
            let text = std::fs::read_to_string(&manifest)
                .with_context(|| format!("reading {}", manifest.display()))?;
            let doc = parse_manifest(&text).context("parsing manifest")?;
            for component in &doc.components {
                let score = score_component(component);
                println!(
                    "{}\tscore={}\texposure={}",
                    component.name,
                    score.value,
                    classify_exposure(component)
                );
            }
            let tie_break = seed.map(TieBreak::SeededRandom).unwrap_or(TieBreak::FirstDeclared);
            let selection = select_ebi(&doc, tie_break);
            match selection.component_name {
                Some(name) => println!("EBI: {name} (score {})", selection.score.value),
                None => println!("EBI: none"),
            }
        }
        Command::Serve {
            bind,
            kid,
            packages,
            log_dir,
        } => {
            let registry = Arc::new(ExperimentRegistry::new());
            for pkg in packages {
                registry.register(
                    &kid,
                    Experiment {
                        pkg,
                        versions: vec![],
                        expected_digests: Default::default(),
                        receipt_only: true,
                    },
                );
            }
            let store = Arc::new(match log_dir {
                Some(dir) => BeaconStore::with_log_dir(dir),
                None => BeaconStore::in_memory(),
            });
            let handle = serve(&bind, registry, store).context("starting receiver")?;
            println!("receiver listening on {}", handle.base_url());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        Command::Run {
            corpus,
            versions,
            runs,
            timeout,
            kid,
            out,
            receipt_only,
            format,
        } => {
            let registry = Arc::new(ExperimentRegistry::new());
            let store = Arc::new(BeaconStore::in_memory());
            let handle = serve("127.0.0.1:0", registry.clone(), store.clone())
                .context("starting receiver")?;
            let mut config = RunConfig::new(corpus, &kid, &handle.base_url());
            if !versions.is_empty() {
                config.device_versions = versions;
            }
            config.runs = runs;
            config.timeout_ms = timeout;
            config.receipt_only = receipt_only;
            config.state_dir = state_dir_override();
            let records = run_suite(&config, &registry, &store)?;
            for record in &records {
                let path = write_run_log(&out, &kid, record)?;
                eprintln!("wrote {}", path.display());
            }
            let merged = union_runs(&records)?;
            let path = write_run_log(&out, &kid, &merged)?;
            eprintln!("wrote {}", path.display());
            for warning in &merged.warnings {
                eprintln!("warning: {warning}");
            }
            for error in &merged.errors {
                eprintln!("error: {error}");
            }
            let matrix = build_matrix(&merged);
            let stats = compute_stats(&matrix);
            print!("{}", emit(&matrix, &stats, to_format(format)));
            handle.shutdown();
        }
        Command::Merge { logs, out, kid } => {
            if logs.is_empty() {
                bail!("no logs given");
            }
            let records = logs
                .iter()
                .map(|p| filecross::commander::read_run_log(p))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = union_runs(&records)?;
            let path = write_run_log(&out, &kid, &merged)?;
            println!("wrote {}", path.display());
        }
        Command::Report { input, format } => {
            let record = filecross::commander::read_run_log(&input)?;
            let matrix = build_matrix(&record);
            let stats = compute_stats(&matrix);
            print!("{}", emit(&matrix, &stats, to_format(format)));
        }
        Command::ValidatePatch {
            before,
            after,
            runs,
        } => {
            let before = load_profile(&before).context("loading before-profile")?;
            let after = load_profile(&after).context("loading after-profile")?;
            let registry = Arc::new(ExperimentRegistry::new());
            let store = Arc::new(BeaconStore::in_memory());
            let handle = serve("127.0.0.1:0", registry.clone(), store.clone())
                .context("starting receiver")?;
            let mut config = RunConfig::new(".", "patch", &handle.base_url());
            config.runs = runs;
            config.state_dir = state_dir_override();
            let report = validate_patch(&before, &after, &config, &registry, &store)?;
            if report.transitions.is_empty() {
                println!("{}: no changes", report.pkg);
            }
            for cell in &report.transitions {
                let label = match cell.transition {
                    Transition::Blocked => "blocked",
                    Transition::StillVulnerable => "STILL VULNERABLE",
                    Transition::Regressed => "REGRESSED",
                };
                println!("{} {} on {}: {label}", report.pkg, cell.attack, cell.ver);
                if let Some(evidence) = &cell.evidence {
                    println!("  evidence: {evidence:?}");
                }
            }
            handle.shutdown();
        }
        Command::Forge {
            attack,
            pkg,
            target,
            origin,
            ver,
            kid,
            receiver_base,
        } => {
            let Some(attack_id) = AttackId::from_number(attack) else {
                bail!("attack must be 1-7, got {attack}");
            };
            let payload = forge(&AttackSpec {
                attack_id,
                target_package: pkg,
                target_file: target,
                remote_origin: origin,
                device_version: ver,
                key_id: kid,
                receiver_base,
            })?;
            println!("{}", serde_json::to_string_pretty(&payload)?);
        }
    }
    Ok(())
}
