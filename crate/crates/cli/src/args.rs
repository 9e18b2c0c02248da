// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use pepsi_core::backend::ModulusProfile;
use pepsi_core::ingest::ElementFormat;
use pepsi_core::planner::{Objective, DEFAULT_ALPHA};
use pepsi_core::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "pepsi",
    version,
    about = "One-round unbalanced PSI over batched homomorphic arithmetic"
)]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match self.verbose {
            0 => "warn",
            1 => "info",
            2 => "debug",
            _ => "trace",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Choose parameters for given set sizes and write a plan file.
    Params(ParamsArgs),
    /// Hash the server set into bins and write the table cache.
    Preprocess(PreprocessArgs),
    /// Answer queries over TCP.
    Serve(ServeArgs),
    /// Send one query and print the result.
    Query(QueryArgs),
    /// Run benchmark scenarios and write a CSV table.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Table,
    Experiments,
}

impl From<ProfileArg> for ModulusProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Table => ModulusProfile::Table,
            ProfileArg::Experiments => ModulusProfile::Experiments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Comm,
    Comp,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Comm => Objective::Comm,
            ObjectiveArg::Comp => Objective::Comp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeArg {
    /// Operation-count model.
    Model,
    /// Time the equality operator on the reference backend.
    Reference,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_format(s: &str) -> Result<ElementFormat, String> {
    s.parse().map_err(|_| "expected int or string".to_string())
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Client set size.
    #[arg(short, long)]
    pub m: u64,
    /// Server set size.
    #[arg(short, long)]
    pub n: u64,
    /// Use elements as fixed-width integers of this many bits instead of
    /// hashing them.
    #[arg(long)]
    pub element_bits: Option<u32>,
    /// Statistical security for hashed elements.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: u32,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Comm)]
    pub objective: ObjectiveArg,
    /// Cost source for `--objective comp`.
    #[arg(long, value_enum, default_value_t = ProbeArg::Model)]
    pub probe: ProbeArg,
    #[arg(long, value_enum, default_value_t = ProfileArg::Table)]
    pub profile: ProfileArg,
    /// Variant the plan must support; inner products need an extra level.
    #[arg(long, value_parser = parse_variant, default_value = "psi")]
    pub variant: Variant,
    /// Drop the hash-index bits from stored residues.
    #[arg(long)]
    pub no_index_bits: bool,
    /// Seed for the hash keys; random when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long, default_value = "plan.toml")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(short, long)]
    pub plan: PathBuf,
    /// Server elements, one per line.
    #[arg(short, long)]
    pub set_file: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "int")]
    pub format: ElementFormat,
    /// Tab-separated `element<TAB>value` lines.
    #[arg(long)]
    pub values_file: Option<PathBuf>,
    /// Treat values as hex byte labels of this length.
    #[arg(long, requires = "values_file")]
    pub label_bytes: Option<usize>,
    /// Cache file; defaults to `$PEPSI_CACHE_DIR/<fingerprint>.tc`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(short, long)]
    pub plan: PathBuf,
    /// Cache written by `preprocess`; defaults as there.
    #[arg(short, long)]
    pub cache: Option<PathBuf>,
    #[arg(short, long, default_value = "127.0.0.1:7878")]
    pub listen: SocketAddr,
    /// Worker threads per query; all cores when absent.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Re-randomize every response ciphertext.
    #[arg(long)]
    pub noise_flooding: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(short, long)]
    pub plan: PathBuf,
    /// Client elements, one per line.
    #[arg(short, long)]
    pub set_file: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "int")]
    pub format: ElementFormat,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub server: String,
    #[arg(long, value_parser = parse_variant, default_value = "psi")]
    pub variant: Variant,
    /// Client values for inner products, `element<TAB>value`.
    #[arg(long)]
    pub values_file: Option<PathBuf>,
    /// Byte length of the server's labels, when they are byte labels.
    #[arg(long)]
    pub label_bytes: Option<usize>,
    /// Seconds to wait on the network.
    #[arg(long, default_value_t = 600)]
    pub timeout: u64,
    /// Result file; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scenario file (TOML).
    pub scenarios: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
