use clap::Parser;

use consensus_lab::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let code = execute(&cli, &mut stdout.lock());
    std::process::exit(code);
}
