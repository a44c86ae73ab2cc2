use clap::Parser;
use vqreg_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("vqreg: {e}");
        std::process::exit(e.exit_code());
    }
}
