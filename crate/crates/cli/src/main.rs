use clap::Parser;

fn main() {
    let cli = ntc_cli::Cli::parse();
    if let Err(e) = ntc_cli::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.exit_code());
    }
}
