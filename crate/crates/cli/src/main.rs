use clap::Parser;

fn main() {
    let cli = ionlock_cli::Cli::parse();
    std::process::exit(ionlock_cli::run(cli));
}
