fn main() {
    std::process::exit(schatten_lab::cli::main_with_args(std::env::args_os()));
}
