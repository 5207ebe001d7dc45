fn main() {
    std::process::exit(sbcc_cli::main_with_args(std::env::args_os()));
}
