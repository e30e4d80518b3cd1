fn main() {
    let mut stdout = std::io::stdout();
    std::process::exit(cnf_cli::run(std::env::args_os(), &mut stdout));
}
