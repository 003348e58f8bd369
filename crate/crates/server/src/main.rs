use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chainanno_core::engine::{finish_bundle, replay, InstanceRef, TraceStep};
use chainanno_core::store::NewUser;
use chainanno_core::{compile, parse_protocol, validate, Datastore};
use chainanno_server::{plugins, Config};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "chainanno", version, about = "Annotation protocol server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an annotation protocol and print one finding per line.
    Validate { ap_file: PathBuf },
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Load a content/context/meta TSV file into the data table.
    Import {
        tsv: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Write every table, plus the per-state annotation export, to a directory.
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Protocol whose state order fixes the export columns.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Replay an answer trace through a protocol and print the bundle.
    Simulate {
        ap_file: PathBuf,
        trace_file: PathBuf,
        /// Text content of the simulated instance.
        #[arg(long, default_value = "simulated instance", conflicts_with = "pages")]
        text: String,
        /// Page images of a simulated file instance, comma-separated.
        #[arg(long, value_delimiter = ',')]
        pages: Option<Vec<String>>,
        #[arg(long)]
        context: Option<String>,
    },
    /// Create a user account.
    UserAdd {
        #[arg(long)]
        username: String,
        #[arg(long, env = "CHAINANNO_NEW_PASSWORD", hide_env_values = true)]
        password: String,
        #[arg(long)]
        admin: bool,
        /// Annotators are created inactive unless this is set.
        #[arg(long)]
        active: bool,
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Args)]
struct StoreArgs {
    /// Database file; defaults to the one named in the config.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

impl StoreArgs {
    fn config(&self) -> Result<Config, String> {
        let mut config = Config::load(self.config.as_deref()).map_err(|e| e.to_string())?;
        if let Some(store) = &self.store {
            config.store = store.clone();
        }
        Ok(config)
    }

    fn open(&self) -> Result<(Datastore, Config), String> {
        let config = self.config()?;
        let store = Datastore::open(&config.store)
            .map_err(|e| format!("{}: {e}", config.store.display()))?;
        Ok((store, config))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { ap_file } => run_validate(&ap_file),
        Command::Serve { config } => run_serve(config.as_deref()),
        Command::Import { tsv, store } => run_import(&tsv, &store),
        Command::Export {
            out,
            protocol,
            store,
        } => run_export(&out, protocol.as_deref(), &store),
        Command::Simulate {
            ap_file,
            trace_file,
            text,
            pages,
            context,
        } => run_simulate(&ap_file, &trace_file, text, pages, context),
        Command::UserAdd {
            username,
            password,
            admin,
            active,
            store,
        } => run_user_add(username, password, admin, active, &store),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_validate(path: &Path) -> Result<ExitCode, String> {
    let protocol = match parse_protocol(&read(path)?) {
        Ok(p) => p,
        Err(e) => {
            for f in &e.errors {
                println!("{f}");
            }
            return Ok(ExitCode::FAILURE);
        }
    };
    let report = validate(&protocol);
    print!("{}", report.to_lines());
    Ok(if report.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run_serve(config: Option<&Path>) -> Result<ExitCode, String> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = Config::load(config).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(chainanno_server::serve(config))?;
    Ok(ExitCode::SUCCESS)
}

fn run_import(tsv: &Path, store: &StoreArgs) -> Result<ExitCode, String> {
    let (store, _) = store.open()?;
    let file = std::fs::File::open(tsv).map_err(|e| format!("{}: {e}", tsv.display()))?;
    let report = store
        .import_tsv(BufReader::new(file))
        .map_err(|e| e.to_string())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(if report.rejected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run_export(out: &Path, protocol: Option<&Path>, store: &StoreArgs) -> Result<ExitCode, String> {
    let (store, config) = store.open()?;
    let order = match protocol.or(config.protocol.as_deref()) {
        Some(path) => {
            let p = parse_protocol(&read(path)?).map_err(|e| e.to_string())?;
            compile(&p).map_err(|e| e.to_string())?.state_order()
        }
        None => Vec::new(),
    };
    let tables = store.export_tables().map_err(|e| e.to_string())?;
    tables
        .write_to(out)
        .map_err(|e| format!("{}: {e}", out.display()))?;
    let by_state = store.export_annotations(&order).map_err(|e| e.to_string())?;
    std::fs::write(out.join("export.tsv"), by_state)
        .map_err(|e| format!("{}: {e}", out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn run_simulate(
    ap_file: &Path,
    trace_file: &Path,
    text: String,
    pages: Option<Vec<String>>,
    context: Option<String>,
) -> Result<ExitCode, String> {
    let protocol = parse_protocol(&read(ap_file)?).map_err(|e| e.to_string())?;
    let machine = compile(&protocol).map_err(|e| e.to_string())?;
    let trace: Vec<TraceStep> = serde_json::from_str(&read(trace_file)?)
        .map_err(|e| format!("{}: {e}", trace_file.display()))?;
    let mut instance = match pages {
        Some(pages) => InstanceRef::pages(1, pages),
        None => InstanceRef::text(1, text),
    };
    if let Some(payload) = instance.payload.as_mut() {
        payload.context = context;
    }
    match replay(&machine, instance, &trace, &plugins::default_registry()) {
        Ok(session) => {
            let bundle = finish_bundle(&session).map_err(|e| e.to_string())?;
            let out = json!({"status": session.status, "path": session.path, "bundle": bundle});
            println!("{}", serde_json::to_string_pretty(&out).expect("bundle serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            let out = json!({"code": e.code, "step": e.step, "message": e.message});
            println!("{}", serde_json::to_string_pretty(&out).expect("error serializes"));
            Ok(ExitCode::FAILURE)
        }
    }
}

fn run_user_add(
    username: String,
    password: String,
    admin: bool,
    active: bool,
    store: &StoreArgs,
) -> Result<ExitCode, String> {
    let (store, _) = store.open()?;
    let user = if admin {
        NewUser::administrator(username, password)
    } else {
        NewUser::annotator(username, password).active(active)
    };
    let user = store.create_user(user).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string(&user).expect("user serializes"));
    Ok(ExitCode::SUCCESS)
}
