use clap::Parser;

fn main() {
    let cli = mfdkf::cli::Cli::parse();
    std::process::exit(mfdkf::cli::execute(cli));
}
