fn main() {
    std::process::exit(depvoice::cli::run(std::env::args_os()));
}
