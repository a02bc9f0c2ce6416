fn main() {
    std::process::exit(pwe::cli::run(std::env::args_os()));
}
