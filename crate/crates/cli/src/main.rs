fn main() {
    std::process::exit(pipehess_cli::main_with_args(std::env::args_os()));
}
