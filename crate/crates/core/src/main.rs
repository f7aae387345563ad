fn main() {
    std::process::exit(halfstrip::cli::main_with_args(std::env::args_os()));
}
