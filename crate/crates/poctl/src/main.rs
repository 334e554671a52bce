fn main() {
    std::process::exit(poctl::cli::run(std::env::args_os()));
}
