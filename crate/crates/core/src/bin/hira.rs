fn main() {
    std::process::exit(hira::cli::run(std::env::args_os()));
}
