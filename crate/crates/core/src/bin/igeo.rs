fn main() {
    std::process::exit(igeo::cli::main_with_args(std::env::args_os()));
}
