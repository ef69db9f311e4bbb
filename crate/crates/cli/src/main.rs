fn main() {
    std::process::exit(bayes_pce_cli::main_with_args(std::env::args_os()));
}
