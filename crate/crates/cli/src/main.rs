fn main() {
    std::process::exit(graphcert_cli::main_with_args(std::env::args_os()));
}
