fn main() {
    std::process::exit(memcoref::cli::main_with_args(std::env::args_os()));
}
