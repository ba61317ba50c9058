use clap::Parser;

fn main() {
    let cli = coopetition::cli::Cli::parse();
    if let Err(e) = coopetition::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
