fn main() {
    std::process::exit(pairforge::cli::main_with_args(std::env::args_os()));
}
