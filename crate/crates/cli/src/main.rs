//! `wayfind`: batch runs, the live session service, and a route printer.

mod backend;
mod fail;
mod route;
mod run;
mod serve;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "wayfind", version, about = "Simulated assistive navigation sessions")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Play a control script against a scenario and write the event trace.
    Run(run::RunArgs),
    /// Host live sessions over HTTP with a server-sent event stream.
    Serve(serve::ServeArgs),
    /// Print the turn-by-turn route between two places on a map.
    Route(route::RouteArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Verb::Run(args) => run::run(args),
        Verb::Serve(args) => serve::serve(args),
        Verb::Route(args) => route::route(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.source);
            ExitCode::from(err.code as u8)
        }
    }
}
