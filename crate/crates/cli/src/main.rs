// SPDX-License-Identifier: Apache-2.0

//! `pepsi`: plan parameters, preprocess a server set, serve it, query it,
//! and run benchmark scenarios.

use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

/// Exit statuses.
mod status {
    pub const OTHER: u8 = 1;
    /// Bin overflow or cuckoo insertion failure.
    pub const PROTOCOL: u8 = 2;
    pub const NETWORK: u8 = 3;
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap would exit with 2, which is reserved for protocol failures.
            return if e.use_stderr() {
                ExitCode::from(status::OTHER)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log_level()))
        .format_timestamp_millis()
        .init();
    let result = match cli.command {
        Command::Params(a) => commands::params(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Serve(a) => commands::serve(a),
        Command::Query(a) => commands::query(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_protocol_failure() {
                status::PROTOCOL
            } else if e.is_network() {
                status::NETWORK
            } else {
                status::OTHER
            })
        }
    }
}
