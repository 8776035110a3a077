fn main() {
    std::process::exit(dgmm::cli::run(std::env::args_os()));
}
