use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epsilon_core::image::{self, ImageError};
use epsilon_core::interp;
use epsilon_core::session::{Session, SessionError};
use epsilon_core::state::SchedulerMode;
use epsilon_core::Config;

/// Optional image header, off unless `--magic` is given.
const MAGIC: &[u8; 8] = b"EPSIMG\x00\x01";

/// Stack for the interpreter thread; nested expansion recurses on the host.
const STACK_BYTES: usize = 512 << 20;

#[derive(Parser, Debug)]
#[command(name = "epsilon", version, about = "A reflective language with a tiny core")]
struct Cli {
    /// Use a seeded random scheduler instead of round-robin.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Steps allowed per toplevel form.
    #[arg(long, global = true)]
    fuel: Option<u64>,
    /// Print one line per machine step on stderr.
    #[arg(long, global = true)]
    trace: bool,
    /// Colorize memory dumps.
    #[arg(long, global = true)]
    color: bool,
    /// Make `analyze` fail on ill-dimensioned programs.
    #[arg(long, global = true)]
    strict: bool,
    /// Start without the prelude.
    #[arg(long, global = true)]
    no_prelude: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every form of a file and print the last results.
    Run { file: PathBuf },
    /// Report procedure and expression dimensions.
    Analyze {
        file: PathBuf,
        /// Flat key=value output.
        #[arg(long)]
        kv: bool,
    },
    /// Load a file and save the state plus its last form as an image.
    Unexec {
        file: PathBuf,
        image: PathBuf,
        #[arg(long)]
        magic: bool,
    },
    /// Restore an image and evaluate its main expression.
    Exec {
        image: PathBuf,
        #[arg(long)]
        magic: bool,
        /// Continue with a REPL afterwards.
        #[arg(long)]
        repl: bool,
    },
    /// Interactive read-eval-print loop (the default).
    Repl,
}

enum Failure {
    Io(String),
    Semantic(String),
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure::Semantic(e.to_string())
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Failure::Semantic(e.to_string())
    }
}

fn io_error(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn config(cli: &Cli) -> Config {
    let mut c = Config::default();
    if let Some(seed) = cli.seed {
        c.scheduler = SchedulerMode::Random(seed);
    }
    if let Some(fuel) = cli.fuel {
        c.fuel = fuel;
    }
    c.trace = cli.trace;
    c
}

fn session(cli: &Cli) -> Result<Session, Failure> {
    let mut s = Session::new(config(cli), !cli.no_prelude)?;
    s.color = cli.color;
    Ok(s)
}

fn read(path: &std::path::Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn print_results(s: &Session, ws: &[epsilon_core::Word]) {
    if !ws.is_empty() {
        println!("{}", s.format_results(ws));
    }
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    match cli.command.as_ref().unwrap_or(&Command::Repl) {
        Command::Run { file } => {
            let text = read(file)?;
            let mut s = session(cli)?;
            let ws = s.run_source(&text)?;
            print_results(&s, &ws);
            Ok(0)
        }
        Command::Analyze { file, kv } => {
            let text = read(file)?;
            let mut s = session(cli)?;
            let (_, report) = s.analyze_source(&text)?;
            print!("{}", if *kv { report.to_kv() } else { report.to_text() });
            Ok(if cli.strict && !report.well_dimensioned { 1 } else { 0 })
        }
        Command::Unexec { file, image: path, magic } => {
            let text = read(file)?;
            let mut s = session(cli)?;
            let main = s.load_with_main(&text)?;
            let mut bytes = if *magic { MAGIC.to_vec() } else { Vec::new() };
            bytes.extend(image::unexec_bytes(&mut s.st, main)?);
            std::fs::write(path, bytes).map_err(|e| io_error(path, e))?;
            Ok(0)
        }
        Command::Exec { image: path, magic, repl } => {
            let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
            let body = if *magic {
                bytes.strip_prefix(&MAGIC[..]).ok_or_else(|| Failure::Semantic("missing image header".into()))?
            } else {
                &bytes[..]
            };
            let (mut st, main) = image::exec_bytes(body)?;
            st.config = config(cli);
            let mut s = Session::from_state(st);
            s.color = cli.color;
            let ws = interp::eval(&mut s.st, main).map_err(|e| Failure::from(SessionError::from(e)))?;
            print_results(&s, &ws);
            Ok(if *repl { s.repl() as u8 } else { 0 })
        }
        Command::Repl => {
            let mut s = session(cli)?;
            Ok(s.repl() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let worker = std::thread::Builder::new().stack_size(STACK_BYTES).spawn(move || match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Io(m)) => {
            eprintln!("epsilon: {m}");
            2
        }
        Err(Failure::Semantic(m)) => {
            eprintln!("epsilon: {m}");
            1
        }
    });
    match worker.map(|h| h.join()) {
        Ok(Ok(code)) => ExitCode::from(code),
        _ => {
            eprintln!("epsilon: interpreter thread crashed");
            ExitCode::from(2)
        }
    }
}
