fn main() {
    std::process::exit(canpredict::cli::run(std::env::args_os()));
}
