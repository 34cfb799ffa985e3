fn main() {
    std::process::exit(shapebias::cli::main_with_args(std::env::args_os()));
}
