fn main() {
    std::process::exit(eos_lab::cli::main_with_args(std::env::args_os()));
}
