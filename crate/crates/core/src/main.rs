fn main() {
    std::process::exit(surgseg::cli::run(std::env::args_os()));
}
