fn main() {
    std::process::exit(phcnet::cli::main_with_args(std::env::args_os()));
}
