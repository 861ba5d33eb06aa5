fn main() {
    std::process::exit(slamkit_cli::commands::main_with_args(std::env::args_os()));
}
