use clap::Parser;

fn main() {
    let cli = ovs_cli::Cli::parse();
    if let Err(e) = ovs_cli::run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
