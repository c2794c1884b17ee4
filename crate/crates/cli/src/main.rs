use clap::Parser;

fn main() {
    let cli = paac_cli::Cli::parse();
    let code = paac_cli::run(cli, &mut std::io::stdout().lock());
    std::process::exit(code);
}
