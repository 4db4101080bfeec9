fn main() {
    std::process::exit(c2ae::cli::main_with_args(std::env::args_os()));
}
