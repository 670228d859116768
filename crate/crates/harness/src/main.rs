use alphacal::cli;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = cli::run(&argv) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
