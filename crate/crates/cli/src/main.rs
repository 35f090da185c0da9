use clap::Parser;

fn main() {
    let cli = spdc_cli::Cli::parse();
    if let Err(e) = spdc_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
