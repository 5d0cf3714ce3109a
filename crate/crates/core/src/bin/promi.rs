fn main() {
    std::process::exit(promi::cli::run(std::env::args_os()));
}
