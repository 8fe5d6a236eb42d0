fn main() {
    std::process::exit(smilenet::cli::run(std::env::args_os()));
}
