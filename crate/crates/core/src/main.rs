fn main() {
    std::process::exit(windfuse::cli::run(std::env::args_os()));
}
