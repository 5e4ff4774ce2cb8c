fn main() {
    std::process::exit(lemer::cli::run(std::env::args_os()));
}
