use clap::Parser;
use torwrap_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("torwrap: {e}");
        std::process::exit(e.exit_code());
    }
}
