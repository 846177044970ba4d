fn main() {
    std::process::exit(shadercorpus::cli::main_with_args(std::env::args_os()));
}
