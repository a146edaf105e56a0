fn main() {
    std::process::exit(largen_sigma::cli::main_with_args(std::env::args_os()));
}
