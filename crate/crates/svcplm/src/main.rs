use clap::Parser;

fn main() {
    let cli = svcplm::cli::Cli::parse();
    std::process::exit(svcplm::cli::run(cli));
}
