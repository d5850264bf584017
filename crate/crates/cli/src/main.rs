use clap::Parser;

fn main() {
    medgrad_cli::init_logging();
    let cli = medgrad_cli::Cli::parse();
    if let Err(err) = medgrad_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
