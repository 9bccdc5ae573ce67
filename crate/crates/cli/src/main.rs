use clap::Parser;

fn main() {
    std::process::exit(xmvae_tool::run(xmvae_tool::Cli::parse()));
}
