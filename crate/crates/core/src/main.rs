use clap::Parser;

fn main() {
    let cli = fnode::cli::Cli::parse();
    let result = fnode::cli::run(cli, &mut std::io::stdout().lock());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    std::process::exit(fnode::cli::exit_code(&result));
}
