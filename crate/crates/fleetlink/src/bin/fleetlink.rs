use clap::Parser;
use fleetlink::cli::{init_logging, run, Cli};

fn main() {
    init_logging();
    std::process::exit(run(Cli::parse()));
}
