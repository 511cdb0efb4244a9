//! Operator commands. Each returns an exit status with the text destined
//! for standard output and standard error, so they run the same from the
//! binary and from tests.
//!
//! Exit codes: 0 success, 1 a check failed or a finding was reported,
//! 2 usage or I/O error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::audit::{audit_run_dir, AuditError};
use crate::crypto::KeyRegistry;
use crate::lang::{compile, Strata};
use crate::monitor::Mode;
use crate::partition::{partition, PartitionError, Topology};
use crate::sim::{bench_scenario, bundled, load_scenario, Harness, RunOptions, Scenario, SimError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CmdOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CmdOutput {
    fn ok(stdout: String) -> Self {
        CmdOutput {
            code: 0,
            stdout,
            stderr: String::new(),
        }
    }

    fn fail(code: i32, msg: impl std::fmt::Display) -> Self {
        CmdOutput {
            code,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CmdOutput> {
    fs::read_to_string(path).map_err(|e| CmdOutput::fail(2, format!("{}: {e}", path.display())))
}

fn load_spec(path: Option<&Path>) -> Result<Strata, CmdOutput> {
    match path {
        Some(p) => compile(&read_text(p)?).map_err(|e| CmdOutput::fail(1, format!("{}: {e}", p.display()))),
        None => compile(bundled::SPEC).map_err(|e| CmdOutput::fail(1, e)),
    }
}

fn load_topology(path: Option<&Path>) -> Result<Topology, CmdOutput> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => bundled::TOPOLOGY.to_string(),
    };
    Topology::from_json(&text).map_err(|e| CmdOutput::fail(1, e))
}

/// Parses, checks safety and stratifies a specification.
pub fn cmd_check(spec: &Path) -> CmdOutput {
    let text = match read_text(spec) {
        Ok(t) => t,
        Err(e) => return e,
    };
    match compile(&text) {
        Ok(strata) => CmdOutput::ok(format!(
            "{}: {} rules, {} facts, {} strata\n",
            spec.display(),
            strata.program.rules.rules.len(),
            strata.program.rules.facts.len(),
            strata.levels.len()
        )),
        Err(e) => CmdOutput::fail(1, format!("{}: {e}", spec.display())),
    }
}

/// Writes one `<principal>.adl` per monitor and `shared.json`.
pub fn cmd_partition(spec: Option<&Path>, topology: Option<&Path>, out: &Path) -> CmdOutput {
    let run = || -> Result<CmdOutput, CmdOutput> {
        let strata = load_spec(spec)?;
        let topo = load_topology(topology)?;
        let result = partition(&strata.program, &topo).map_err(|e| match e {
            PartitionError::Topology(_) => CmdOutput::fail(2, e),
            other => CmdOutput::fail(1, other),
        })?;
        fs::create_dir_all(out).map_err(|e| CmdOutput::fail(2, format!("{}: {e}", out.display())))?;
        let mut stdout = String::new();
        for (principal, rs) in &result.assignments {
            let path = out.join(format!("{principal}.adl"));
            let text = result.render(principal).expect("assigned principal");
            fs::write(&path, text).map_err(|e| CmdOutput::fail(2, format!("{}: {e}", path.display())))?;
            let ids: Vec<String> = rs.rules.rules.iter().map(|r| r.id.to_string()).collect();
            let _ = writeln!(stdout, "{principal}: rules [{}]", ids.join(", "));
        }
        let shared: Vec<_> = result.shared.iter().collect();
        let path = out.join("shared.json");
        let json = serde_json::to_string_pretty(&shared).expect("shared serializes") + "\n";
        fs::write(&path, json).map_err(|e| CmdOutput::fail(2, format!("{}: {e}", path.display())))?;
        for s in &shared {
            let _ = writeln!(stdout, "shared {} from {} to {}", s.predicate, s.from, s.to);
        }
        Ok(CmdOutput::ok(stdout))
    };
    run().unwrap_or_else(|e| e)
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    /// A file path or the name of a bundled scenario.
    pub scenario: String,
    pub spec: Option<PathBuf>,
    pub topology: Option<PathBuf>,
    pub mode: Mode,
    pub partitioned: bool,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub compact: bool,
}

fn resolve_scenario(name: &str) -> Result<Scenario, CmdOutput> {
    let path = Path::new(name);
    if path.exists() {
        return load_scenario(path).map_err(|e| CmdOutput::fail(1, e));
    }
    match bundled::scenario(name) {
        Some(r) => r.map_err(|e| CmdOutput::fail(1, e)),
        None => Err(CmdOutput::fail(2, format!("{name}: no such file or bundled scenario"))),
    }
}

pub fn cmd_run(args: &RunArgs) -> CmdOutput {
    let run = || -> Result<CmdOutput, CmdOutput> {
        let mut sc = resolve_scenario(&args.scenario)?;
        if let Some(seed) = args.seed {
            sc.seed = seed;
        }
        let harness = Harness::new(load_spec(args.spec.as_deref())?, load_topology(args.topology.as_deref())?);
        let mut opts = RunOptions::new(args.mode, args.partitioned);
        opts.compact = args.compact;
        let out = harness.run(&sc, &opts).map_err(|e| match e {
            SimError::Io(_) => CmdOutput::fail(2, e),
            other => CmdOutput::fail(1, other),
        })?;
        if let Some(dir) = &args.out {
            out.persist(dir).map_err(|e| CmdOutput::fail(2, e))?;
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode {} {}: {} log entries, {} verdicts",
            args.mode.short(),
            if args.partitioned { "partitioned" } else { "global" },
            out.log.size(),
            out.verdicts.len()
        );
        for v in &out.verdicts {
            let who: Vec<&str> = v.responsible.iter().map(String::as_str).collect();
            let _ = writeln!(s, "verdict {} by {} responsible [{}]", v.atom(), v.monitor, who.join(", "));
        }
        let m = &out.metrics;
        let _ = writeln!(
            s,
            "processed {} rejected {} firings {} iterations {} hashes {} signatures {} bytes {} mean_blocking {:.2}",
            m.events_processed,
            m.events_rejected,
            m.rule_firings,
            m.fixpoint_iterations,
            m.hash_computations,
            m.signature_verifications,
            m.bytes_appended,
            m.mean_blocking_ticks()
        );
        Ok(CmdOutput::ok(s))
    };
    run().unwrap_or_else(|e| e)
}

/// Replays a run directory. Prints a JSON report; exit 1 on any finding.
pub fn cmd_audit(log_dir: &Path, spec: Option<&Path>, registry: Option<&Path>) -> CmdOutput {
    let run = || -> Result<CmdOutput, CmdOutput> {
        let strata = load_spec(spec)?;
        let reg_path = registry.map(Path::to_path_buf).unwrap_or_else(|| log_dir.join("registry.txt"));
        let reg = KeyRegistry::from_text(&read_text(&reg_path)?)
            .map_err(|e| CmdOutput::fail(2, format!("{}: {e}", reg_path.display())))?;
        let report = audit_run_dir(log_dir, &strata, &reg).map_err(|e| match e {
            AuditError::Io(..) => CmdOutput::fail(2, e),
            AuditError::Format(..) => CmdOutput::fail(1, e),
        })?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        Ok(CmdOutput {
            code: if report.ok { 0 } else { 1 },
            stdout: json,
            stderr: String::new(),
        })
    };
    run().unwrap_or_else(|e| e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub mode: Mode,
    pub sessions: u64,
    pub events: u64,
    pub seconds: f64,
    pub events_per_second: f64,
    pub mean_blocking_ticks: f64,
    pub max_blocking_ticks: u64,
    pub hash_computations: u64,
    pub signature_verifications: u64,
    pub log_bytes: u64,
}

/// Runs `n` nominal sessions through a global monitor in both modes.
pub fn bench(n: u64, seed: u64) -> Result<Vec<BenchRow>, SimError> {
    let harness = Harness::bundled()?;
    let sc = bench_scenario(n, seed);
    let mut rows = Vec::new();
    for mode in [Mode::TrustThenVerify, Mode::VerifyThenTrust] {
        let start = Instant::now();
        let out = harness.run(&sc, &RunOptions::new(mode, false))?;
        let seconds = start.elapsed().as_secs_f64();
        let m = &out.metrics;
        rows.push(BenchRow {
            mode,
            sessions: n,
            events: m.events_processed,
            seconds,
            events_per_second: m.events_processed as f64 / seconds.max(1e-9),
            mean_blocking_ticks: m.mean_blocking_ticks(),
            max_blocking_ticks: m.blocking_ticks.iter().copied().max().unwrap_or(0),
            hash_computations: m.hash_computations,
            signature_verifications: m.signature_verifications,
            log_bytes: m.bytes_appended,
        });
    }
    Ok(rows)
}

pub fn cmd_bench(n: u64, seed: u64) -> CmdOutput {
    if n == 0 {
        return CmdOutput::fail(2, "bench needs at least one session");
    }
    let rows = match bench(n, seed) {
        Ok(r) => r,
        Err(e) => return CmdOutput::fail(1, e),
    };
    let mut s = format!(
        "{:<5} {:>8} {:>8} {:>12} {:>14} {:>13} {:>10} {:>10} {:>12}\n",
        "mode", "sessions", "events", "events/s", "mean_blocking", "max_blocking", "hashes", "sigs", "log_bytes"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<5} {:>8} {:>8} {:>12.0} {:>14.2} {:>13} {:>10} {:>10} {:>12}",
            r.mode.short(),
            r.sessions,
            r.events,
            r.events_per_second,
            r.mean_blocking_ticks,
            r.max_blocking_ticks,
            r.hash_computations,
            r.signature_verifications,
            r.log_bytes
        );
    }
    CmdOutput::ok(s)
}
