fn main() {
    std::process::exit(cellevac::cli::main_with_args(std::env::args_os()));
}
