fn main() {
    std::process::exit(shrinkground::harness::cli::run(std::env::args_os()));
}
