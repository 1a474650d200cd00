use clap::Parser;

fn main() {
    let cli = spinwire_cli::Cli::parse();
    std::process::exit(spinwire_cli::run(cli));
}
