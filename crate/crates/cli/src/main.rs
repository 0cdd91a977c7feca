fn main() {
    std::process::exit(shuttlesim_cli::main_with_args(std::env::args_os()));
}
