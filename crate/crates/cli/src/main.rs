fn main() {
    std::process::exit(rnla_cli::cli::main_with_args(std::env::args_os()));
}
