fn main() {
    std::process::exit(nemo::cli::run(std::env::args_os()));
}
