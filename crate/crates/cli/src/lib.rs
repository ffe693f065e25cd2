//! `dockirl` command line: dataset generation, training, evaluation,
//! map rendering and the built-in self-checks.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dockirl::expert_gen::{generate_dataset, Dataset};
use dockirl::io::{map_from_csv, map_to_pgm, write_atomic};
use dockirl::rewardnet::{read_checkpoint, write_checkpoint};
use dockirl::trainer::{evaluate, train, TrainConfig};
use dockirl::{oracle, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Name of the config copy stored next to training outputs.
pub const CONFIG_FILE: &str = "config.txt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(name = "dockirl", version, about = "Deep maximum-entropy IRL for vessel docking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations as line-delimited JSON.
    GenData {
        #[arg(long)]
        train: usize,
        #[arg(long)]
        test: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reward network on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value file; see `TrainConfig`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split. A `config.txt` next to the
    /// checkpoint supplies the window and MDP settings.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a CSV map as an 8-bit PGM.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the enumeration and finite-difference self-checks.
    OracleCheck,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn read_text(path: &Path) -> dockirl::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> dockirl::Result<()> {
    match cmd {
        Command::GenData { train, test, seed, out } => {
            let ds = generate_dataset(train, test, seed)?;
            ds.write(&out)?;
            println!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let config = TrainConfig::parse(&read_text(&config)?)?;
            let ds = Dataset::from_jsonl(&read_text(&data)?)?;
            std::fs::create_dir_all(&out)?;
            write_atomic(&out.join(CONFIG_FILE), config.to_text().as_bytes())?;
            let (params, report) = train(&ds, &config, |epoch, p| {
                write_checkpoint(&out.join(format!("epoch_{epoch:04}.ckpt")), p)
            })?;
            write_checkpoint(&out.join(FINAL_CHECKPOINT), &params)?;
            write_atomic(&out.join(REPORT_FILE), report.to_csv().as_bytes())?;
            println!(
                "trained {} epochs: probe NLL {:.4} -> {:.4}",
                report.epochs.len(),
                report.initial_nll,
                report.final_nll()
            );
        }
        Command::Eval { data, checkpoint, out } => {
            let params = read_checkpoint(&checkpoint)?;
            let cfg_path = checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
            let config = if cfg_path.is_file() {
                TrainConfig::parse(&read_text(&cfg_path)?)?
            } else {
                TrainConfig::default()
            };
            let ds = Dataset::from_jsonl(&read_text(&data)?)?;
            let report = evaluate(&params, &ds, &config)?;
            report.write(&out)?;
            print!("{}", report.summary_text());
        }
        Command::Render { input, out } => {
            let map = map_from_csv(&read_text(&input)?)?;
            write_atomic(&out, &map_to_pgm(&map))?;
        }
        Command::OracleCheck => {
            let results = oracle::run_all();
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Error::Diverged(format!("{failed} oracle suite(s) failed")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dockirl"]), EXIT_USAGE);
        assert_eq!(run(["dockirl", "gen-data", "--train", "1"]), EXIT_USAGE);
        assert_eq!(run(["dockirl", "render", "--input", "a", "--out", "b", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["dockirl", "frobnicate"]), EXIT_USAGE);
    }

    #[test]
    fn missing_files_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let out = dir.path().join("x.pgm");
        let args = ["dockirl", "render", "--input", missing.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert_eq!(run(args), EXIT_FAILURE);
        assert!(!out.exists());
    }
}
