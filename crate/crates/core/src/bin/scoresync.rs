fn main() {
    std::process::exit(scoresync::cli::run(std::env::args_os()));
}
