fn main() {
    std::process::exit(broad_mamba::cli::run(std::env::args_os()));
}
