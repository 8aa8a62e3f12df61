fn main() {
    std::process::exit(plsi::cli::main_with_args(std::env::args_os()));
}
