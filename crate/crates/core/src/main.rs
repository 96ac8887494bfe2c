use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use docflow::access::{Action, UserId};
use docflow::engine::{EngineError, ErrorCategory, Ref};
use docflow::fixture::{self, FixtureError};
use docflow::isa::HierarchyKind;
use docflow::routing::Entry;
use docflow::service::http::{self, AppState};
use docflow::service::{Config, Service, ServiceError};
use docflow::store::{DocId, Query};

/// Document workflow engine: administration, fixtures and the HTTP service.
#[derive(Parser)]
#[command(name = "docflow", version)]
struct Cli {
    /// Directory holding the event log, snapshots and blobs.
    #[arg(long, global = true, env = "GW_DATA_DIR", default_value = "./docflow-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Install the default class hierarchies and routes.
    Init,
    /// Load a fixture file; entities that already exist are skipped.
    Load { fixture: PathBuf },
    /// List documents matching a query that the caller may read.
    Search(SearchArgs),
    /// Route inspection.
    Route {
        #[command(subcommand)]
        cmd: RouteCmd,
    },
    /// Print the access decision matrix for all users and documents.
    Matrix {
        /// Comma-separated actions.
        #[arg(long, default_value = "Read")]
        action: String,
    },
    /// Audit trail.
    Audit {
        #[command(subcommand)]
        cmd: AuditCmd,
    },
    /// Print the state digest.
    Digest,
    /// Write a snapshot now.
    Snapshot,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "GW_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    /// Snapshot after every N events; 0 disables.
    #[arg(long, env = "GW_SNAPSHOT_EVERY", default_value_t = 0)]
    snapshot_every: u64,
    /// Static files served under /ui.
    #[arg(long, env = "GW_UI_DIR")]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Document class; subclasses match too.
    #[arg(long)]
    class: Option<String>,
    /// Case-insensitive title substring.
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    author: Option<String>,
    /// Include archived documents.
    #[arg(long)]
    archived: bool,
    /// Search as this user (name or id); `system` sees everything.
    #[arg(long = "as", env = "GW_USER", default_value = "system")]
    user: String,
}

#[derive(Subcommand)]
enum RouteCmd {
    /// Print a document's route history and next candidates.
    Trace { doc: u64 },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Print the last events, one JSON object per line.
    Tail {
        #[arg(short = 'n', long, default_value_t = 10)]
        lines: usize,
        /// Show refused mutations instead.
        #[arg(long)]
        denials: bool,
    },
}

/// A failure with its exit code and reason code.
struct Failure {
    code: u8,
    reason: String,
    message: String,
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e.category() {
            ErrorCategory::Policy => 2,
            ErrorCategory::NotFound => 3,
            ErrorCategory::Malformed => 4,
            ErrorCategory::Conflict | ErrorCategory::Storage => 1,
        };
        Failure {
            code,
            reason: e.label(),
            message: e.to_string(),
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure {
            code: 1,
            reason: "StorageFailure".into(),
            message: e.to_string(),
        }
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        let message = e.to_string();
        match e {
            FixtureError::Apply { source, .. } => Failure {
                message,
                ..Failure::from(source)
            },
            FixtureError::Parse { .. } => Failure {
                code: 4,
                reason: "MalformedInput".into(),
                message,
            },
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            reason: "StorageFailure".into(),
            message: e.to_string(),
        }
    }
}

fn parse_ref(s: &str) -> Ref {
    s.parse::<u64>().map_or_else(|_| Ref::Name(s.to_string()), Ref::Id)
}

fn open(cli: &Cli, snapshot_every: u64) -> Result<Service, Failure> {
    Ok(Service::open(&Config {
        data_dir: cli.data_dir.clone(),
        snapshot_every,
    })?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match &cli.cmd {
        Cmd::Serve(args) => {
            let svc = open(&cli, args.snapshot_every)?;
            let state = Arc::new(AppState {
                service: svc,
                ui_dir: args.ui_dir.clone(),
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&args.listen).await?;
                writeln!(out, "listening on {}", listener.local_addr()?)?;
                out.flush()?;
                http::serve(state, listener).await
            })?;
        }
        Cmd::Init => {
            let svc = open(&cli, 0)?;
            let r = fixture::init(&mut &svc)?;
            writeln!(out, "applied {}, skipped {}", r.applied, r.skipped)?;
        }
        Cmd::Load { fixture: path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure {
                code: 3,
                reason: "UnknownTarget".into(),
                message: format!("{}: {e}", path.display()),
            })?;
            let svc = open(&cli, 0)?;
            let r = fixture::load_text(&text, &mut &svc)?;
            writeln!(out, "applied {}, skipped {}", r.applied, r.skipped)?;
        }
        Cmd::Search(a) => {
            let svc = open(&cli, 0)?;
            let (_, e) = svc.view();
            let user = if a.user == "system" {
                UserId::SYSTEM
            } else {
                e.resolve_user(&parse_ref(&a.user))?
            };
            let q = Query {
                class: a
                    .class
                    .as_deref()
                    .map(|c| e.resolve_class(HierarchyKind::DocumentClass, &parse_ref(c)))
                    .transpose()?,
                title: a.title.clone(),
                author: a.author.as_deref().map(|u| e.resolve_user(&parse_ref(u))).transpose()?,
                include_archived: a.archived,
            };
            let classes = e.hierarchy(HierarchyKind::DocumentClass);
            for id in e.search(user, &q)? {
                let d = e.document(id)?;
                let class = classes.name(d.profile.class).unwrap_or("?");
                writeln!(out, "{}|{}|{}|{}", id, d.profile.title, class, d.status.as_str())?;
            }
        }
        Cmd::Route {
            cmd: RouteCmd::Trace { doc },
        } => {
            let svc = open(&cli, 0)?;
            let (_, e) = svc.view();
            let doc = DocId(*doc);
            e.document(doc)?;
            let rs = e.route_state(doc).ok_or(EngineError::NotInRoute(doc))?;
            let spec = &e.routes()[&rs.route];
            let name = |u: UserId| e.user(u).map(|u| u.name.clone()).unwrap_or_else(|_| u.to_string());
            writeln!(
                out,
                "route {} ({}) document {} status {} position {}",
                spec.name,
                spec.id,
                doc,
                rs.status.as_str(),
                rs.cursor + 1
            )?;
            for h in &rs.history {
                match &h.entry {
                    Entry::Act { action } => writeln!(out, "  seq {}: {} {}", h.seq, name(h.user), action)?,
                    Entry::Reject { reason } => writeln!(out, "  seq {}: {} rejected: {}", h.seq, name(h.user), reason)?,
                }
            }
            match e.next_candidates(doc) {
                Ok(step) => {
                    writeln!(out, "next: {}", step.required_action)?;
                    for c in &step.candidates {
                        writeln!(out, "  {} {}", c.name, c.decision)?;
                    }
                }
                Err(_) => writeln!(out, "next: none")?,
            }
        }
        Cmd::Matrix { action } => {
            let actions = action
                .split(',')
                .map(|a| a.parse::<Action>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EngineError::Malformed(e.to_string()))?;
            let svc = open(&cli, 0)?;
            write!(out, "{}", svc.view().1.decision_matrix(&actions)?.to_text())?;
        }
        Cmd::Audit {
            cmd: AuditCmd::Tail { lines, denials },
        } => {
            let svc = open(&cli, 0)?;
            let rows: Vec<String> = if *denials {
                svc.denials(0)?
                    .iter()
                    .map(|d| serde_json::to_string(d).expect("serializable"))
                    .collect()
            } else {
                svc.audit(0)?
                    .iter()
                    .map(|ev| serde_json::to_string(ev).expect("serializable"))
                    .collect()
            };
            for r in &rows[rows.len().saturating_sub(*lines)..] {
                writeln!(out, "{r}")?;
            }
        }
        Cmd::Digest => {
            let svc = open(&cli, 0)?;
            let (seq, e) = svc.view();
            writeln!(out, "{seq} {}", e.digest())?;
        }
        Cmd::Snapshot => {
            let svc = open(&cli, 0)?;
            let snap = svc.snapshot_and_compact()?;
            writeln!(out, "{} {}", snap.seq, snap.digest)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GW_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.reason, f.message);
            ExitCode::from(f.code)
        }
    }
}
