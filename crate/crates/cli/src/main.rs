fn main() {
    std::process::exit(qnnguard_cli::main_with_args(std::env::args_os()));
}
