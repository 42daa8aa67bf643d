//! `cdw` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cdw_core::ingest::{SourceDescriptor, StagingArea};
use cdw_core::olap::{self, Axis, QuerySpec};
use cdw_core::pipeline::{ingest_generated, run_etl};
use cdw_core::reports;
use cdw_core::schema::{MemberPath, SourceKind};
use cdw_core::synthgen::{self, SynthConfig, SynthSummary};
use cdw_core::transform::{TransformConfig, DEFAULT_NATIONAL_ID_PATTERN};
use cdw_core::warehouse::{Grain, Snapshot, Writer};

use crate::access_log::{self, AccessLogEntry, AccessLogFilter, Operation};
use crate::server::{self, apply_drill, Direction, DrillRequest, ServerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cdw", version, about = "Cancer registry data warehouse")]
pub struct Cli {
    #[arg(long, global = true, env = "CDW_WAREHOUSE", default_value = "warehouse")]
    pub warehouse: PathBuf,
    #[arg(long, global = true, env = "CDW_STAGING", default_value = "staging")]
    pub staging: PathBuf,
    /// Name recorded in the access log.
    #[arg(long, global = true, env = "CDW_ACTOR", default_value = "cli")]
    pub actor: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source set.
    Synth(SynthArgs),
    /// Stage one source, or every source of a generated directory.
    Ingest(IngestArgs),
    /// List staged batches.
    Staged {
        #[arg(long)]
        kind: Option<SourceKind>,
    },
    #[command(subcommand)]
    /// Run the transform and load step.
    Etl(EtlCommand),
    #[command(subcommand)]
    /// Build or list aggregate tables.
    Aggregate(AggregateCommand),
    /// Print the cube definitions.
    Catalog,
    /// Answer a query spec.
    Query(QueryArgs),
    /// Rewrite a spec one level down or up.
    Drill(DrillArgs),
    /// Run a named report.
    Report(ReportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Print access-log entries as JSON.
    AccessLog {
        #[arg(long)]
        actor: Option<String>,
        #[arg(long, value_parser = parse_instant)]
        since: Option<DateTime<Utc>>,
        #[arg(long, value_parser = parse_instant)]
        until: Option<DateTime<Utc>>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub patients: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub dup: f64,
    #[arg(long, default_value_t = 0.01)]
    pub malformed: f64,
    #[arg(long, default_value_t = 0.01)]
    pub orphan: f64,
    #[arg(long, default_value_t = 2010)]
    pub first_year: i32,
    #[arg(long, default_value_t = 2014)]
    pub last_year: i32,
    #[arg(long, default_value_t = 6)]
    pub min_events: u32,
    #[arg(long, default_value_t = 14)]
    pub max_events: u32,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory written by `synth`; its summary supplies `as_of`.
    #[arg(long, conflicts_with_all = ["source_id", "kind", "path"])]
    pub generated: Option<PathBuf>,
    #[arg(long, requires_all = ["kind", "path"])]
    pub source_id: Option<String>,
    #[arg(long)]
    pub kind: Option<SourceKind>,
    /// CSV file, or a directory of medical files for lab_results.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// RFC 3339 instant or YYYY-MM-DD; defaults to now.
    #[arg(long, value_parser = parse_instant)]
    pub as_of: Option<DateTime<Utc>>,
}

#[derive(Debug, Subcommand)]
pub enum EtlCommand {
    /// Transform the current staged batches and load the warehouse.
    Run {
        /// Reference date for date-of-birth checks; defaults to today.
        #[arg(long)]
        today: Option<NaiveDate>,
        #[arg(long, default_value = DEFAULT_NATIONAL_ID_PATTERN)]
        national_id_pattern: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum AggregateCommand {
    /// Materialize an aggregate, e.g. `treatment:date@year,cancer@type`.
    Build {
        #[arg(long)]
        grain: String,
    },
    /// Aggregates with their grain, row count and staleness.
    List,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Query spec as JSON; `-` reads stdin.
    #[arg(long)]
    pub file: PathBuf,
    /// Print the plan alongside the cells.
    #[arg(long)]
    pub explain: bool,
    /// Ignore aggregates.
    #[arg(long)]
    pub base: bool,
}

#[derive(Debug, Args)]
pub struct DrillArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, default_value = "rows")]
    pub axis: Axis,
    #[arg(long)]
    pub dimension: Option<String>,
    /// Member to drill into, as `a/b/c` or a JSON array.
    #[arg(long, value_parser = parse_member)]
    pub member: Option<MemberPath>,
    /// Roll up instead of drilling down.
    #[arg(long)]
    pub up: bool,
    /// Also run the rewritten spec.
    #[arg(long)]
    pub run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub id: String,
    /// Extra `key=value` parameters.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, String)>,
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub end: Option<String>,
    #[arg(long)]
    pub group_by: Option<String>,
    #[arg(long)]
    pub cancer_type: Option<String>,
    #[arg(long)]
    pub drug_code: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CDW_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Overrides the port of `--bind`.
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory of static files served under `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("'{s}' is neither RFC 3339 nor YYYY-MM-DD"))
}

fn parse_member(s: &str) -> Result<MemberPath, String> {
    if s.trim_start().starts_with('[') {
        return serde_json::from_str(s).map_err(|e| e.to_string());
    }
    Ok(MemberPath::new(s.split('/')))
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

/// Exit code for an error: validation problems are 1, everything else 2.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<cdw_core::Error>() {
        Some(core) if core.is_validation() => EXIT_VALIDATION,
        Some(_) => EXIT_IO,
        None if e.downcast_ref::<serde_json::Error>().is_some() => EXIT_VALIDATION,
        None => EXIT_IO,
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf)?;
        return Ok(buf);
    }
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_spec(bytes: &[u8]) -> Result<QuerySpec, cdw_core::Error> {
    let text = std::str::from_utf8(bytes).map_err(|e| cdw_core::Error::InvalidSpec(e.to_string()))?;
    QuerySpec::from_json(text)
}

/// Runs an analytical command and appends its access-log entry.
fn logged<T>(
    cli: &Cli,
    operation: Operation,
    request: &[u8],
    work: impl FnOnce() -> Result<T, cdw_core::Error>,
) -> anyhow::Result<T> {
    let timestamp = Utc::now();
    let started = Instant::now();
    let result = work();
    let entry = AccessLogEntry {
        timestamp,
        actor: cli.actor.clone(),
        operation,
        request_digest: access_log::digest(request),
        duration_ms: started.elapsed().as_millis() as u64,
        outcome: access_log::outcome(&result),
    };
    if cli.warehouse.is_dir() {
        access_log::append(&access_log::log_path(&cli.warehouse), &entry)
            .context("appending to the access log")?;
    }
    Ok(result?)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let config = SynthConfig {
                seed: a.seed,
                n_patients: a.patients,
                duplicate_rate: a.dup,
                malformed_rate: a.malformed,
                orphan_rate: a.orphan,
                first_year: a.first_year,
                last_year: a.last_year,
                min_events: a.min_events,
                max_events: a.max_events,
            };
            let summary = synthgen::generate(&config, &a.out)?;
            print_json(&summary)
        }
        Command::Ingest(a) => ingest(&cli, a),
        Command::Staged { kind } => {
            let staging = StagingArea::open(&cli.staging)?;
            print_json(&staging.list_staged(*kind)?)
        }
        Command::Etl(EtlCommand::Run { today, national_id_pattern }) => {
            let now = Utc::now();
            let config = TransformConfig::new(national_id_pattern, today.unwrap_or_else(|| now.date_naive()))?;
            let staging = StagingArea::open(&cli.staging)?;
            let report = run_etl(&staging, &cli.warehouse, &config, now)?;
            eprintln!("{} batches", report.batches.len());
            print_json(&report)
        }
        Command::Aggregate(AggregateCommand::Build { grain }) => {
            let grain = Grain::parse(grain)?;
            let mut writer = Writer::open(&cli.warehouse)?;
            print_json(&writer.build_aggregate(&grain, Utc::now())?)
        }
        Command::Aggregate(AggregateCommand::List) => {
            #[derive(Serialize)]
            struct Listed<'a> {
                #[serde(flatten)]
                meta: &'a cdw_core::warehouse::AggregateMeta,
                stale: bool,
            }
            let snap = Snapshot::open(&cli.warehouse)?;
            let listed: Vec<Listed> = snap
                .aggregates()
                .iter()
                .map(|a| Listed {
                    meta: &a.meta,
                    stale: snap.is_stale(a),
                })
                .collect();
            print_json(&listed)
        }
        Command::Catalog => {
            let catalog = logged(&cli, Operation::Catalog, b"catalog", || Ok(olap::catalog()))?;
            print_json(&catalog)
        }
        Command::Query(a) => query(&cli, a),
        Command::Drill(a) => drill(&cli, a),
        Command::Report(a) => report(&cli, a),
        Command::Serve(a) => serve(&cli, a),
        Command::AccessLog { actor, since, until } => {
            let filter = AccessLogFilter {
                actor: actor.clone(),
                since: *since,
                until: *until,
            };
            print_json(&access_log::read(&access_log::log_path(&cli.warehouse), &filter)?)
        }
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> anyhow::Result<()> {
    let staging = StagingArea::open(&cli.staging)?;
    let batches = if let Some(dir) = &a.generated {
        let as_of = match a.as_of {
            Some(t) => t,
            None => {
                let path = dir.join(synthgen::SUMMARY_FILE);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<SynthSummary>(&text)?.as_of
            }
        };
        ingest_generated(&staging, dir, as_of)?
    } else {
        let (Some(source_id), Some(kind), Some(path)) = (&a.source_id, a.kind, &a.path) else {
            bail!(cdw_core::Error::InvalidConfig(
                "ingest needs --generated or all of --source-id, --kind and --path".into()
            ));
        };
        let as_of = a.as_of.unwrap_or_else(Utc::now);
        let batch = if kind == SourceKind::LabResults {
            staging.extract_medical_files(source_id, path, as_of)?
        } else {
            staging.extract_csv(SourceDescriptor {
                source_id: source_id.clone(),
                kind,
                path: path.clone(),
                as_of,
            })?
        };
        vec![batch]
    };
    let ids: Vec<u64> = batches.iter().map(|b| b.batch_id).collect();
    let summaries: Vec<_> = staging
        .list_staged(None)?
        .into_iter()
        .filter(|s| ids.contains(&s.batch_id))
        .collect();
    print_json(&summaries)
}

fn query(cli: &Cli, a: &QueryArgs) -> anyhow::Result<()> {
    let request = read_input(&a.file)?;
    let snap = Snapshot::open(&cli.warehouse)?;
    #[derive(Serialize)]
    struct Explained {
        plan: olap::QueryPlan,
        cells: olap::CellSet,
    }
    let out = logged(cli, Operation::Query, &request, || {
        let spec = parse_spec(&request)?;
        if a.base {
            let cells = olap::query_base(&snap, &spec)?;
            let plan = olap::QueryPlan {
                access_path: olap::AccessPath::BaseScan,
                reason: "forced by --base".into(),
            };
            Ok(Explained { plan, cells })
        } else {
            let (cells, plan) = olap::query_explained(&snap, &spec)?;
            Ok(Explained { plan, cells })
        }
    })?;
    if a.explain {
        print_json(&out)
    } else {
        print_json(&out.cells)
    }
}

fn drill(cli: &Cli, a: &DrillArgs) -> anyhow::Result<()> {
    let input = read_input(&a.file)?;
    let snap = Snapshot::open(&cli.warehouse)?;
    let spec = parse_spec(&input)?;
    let req = DrillRequest {
        spec,
        axis: a.axis,
        dimension: a.dimension.clone(),
        member_path: a.member.clone(),
        direction: if a.up { Direction::Up } else { Direction::Down },
    };
    let request = serde_json::to_vec(&req)?;
    let rewritten = logged(cli, Operation::Drill, &request, || apply_drill(&snap, &req))?;
    if a.run {
        let cells = logged(cli, Operation::Query, &serde_json::to_vec(&rewritten)?, || {
            olap::query(&snap, &rewritten)
        })?;
        print_json(&serde_json::json!({ "spec": rewritten, "cells": cells }))
    } else {
        print_json(&rewritten)
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> anyhow::Result<()> {
    if !reports::REPORT_IDS.contains(&a.id.as_str()) {
        return Err(anyhow!(cdw_core::Error::InvalidSpec(format!(
            "unknown report '{}'; known: {}",
            a.id,
            reports::REPORT_IDS.join(", ")
        ))));
    }
    let mut params: BTreeMap<String, String> = a.params.iter().cloned().collect();
    for (key, value) in [
        ("start", &a.start),
        ("end", &a.end),
        ("group_by", &a.group_by),
        ("cancer_type", &a.cancer_type),
        ("drug_code", &a.drug_code),
    ] {
        if let Some(v) = value {
            params.insert(key.to_string(), v.clone());
        }
    }
    let snap = Snapshot::open(&cli.warehouse)?;
    let request = serde_json::to_vec(&serde_json::json!({ "report": a.id, "params": params }))?;
    let result = logged(cli, Operation::Report, &request, || {
        reports::run_report(&snap, &a.id, &params, Utc::now())
    })?;
    match a.format {
        Format::Json => print_json(&result),
        Format::Csv => {
            print!("{}", result.to_csv()?);
            Ok(())
        }
    }
}

fn serve(cli: &Cli, a: &ServeArgs) -> anyhow::Result<()> {
    let mut bind = a.bind;
    if let Some(port) = a.port {
        bind.set_port(port);
    }
    let config = ServerConfig {
        warehouse: cli.warehouse.clone(),
        cors_origins: a.cors_origins.clone(),
        static_dir: a.static_dir.clone(),
        clock: Arc::new(Utc::now),
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(server::serve(config, bind))
}
