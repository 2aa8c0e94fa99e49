use clap::Parser;

fn main() {
    std::process::exit(usgan::cli::run(usgan::cli::Cli::parse()));
}
