fn main() {
    std::process::exit(whalewatch::cli::run(std::env::args_os()));
}
