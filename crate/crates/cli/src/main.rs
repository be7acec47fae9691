fn main() {
    std::process::exit(roadrank_cli::run(std::env::args_os()));
}
