use clap::Parser;

fn main() {
    let cli = lsps::cli::Cli::parse();
    match lsps::cli::run(cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
