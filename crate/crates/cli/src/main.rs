use clap::Parser;
use parkbench::args::Cli;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    if let Err(e) = parkbench::dispatch(&cli, &argv) {
        eprintln!("parkbench: {e}");
        std::process::exit(e.exit_code());
    }
}
