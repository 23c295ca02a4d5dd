fn main() {
    std::process::exit(marketstates::cli::run(std::env::args_os()));
}
