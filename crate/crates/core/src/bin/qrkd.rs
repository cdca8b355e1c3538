fn main() {
    std::process::exit(qrkd::cli::run(std::env::args_os()));
}
