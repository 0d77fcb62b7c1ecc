fn main() {
    std::process::exit(ultrasum::cli::run(std::env::args_os()));
}
