fn main() {
    std::process::exit(convdyn::cli::main_with_args(std::env::args_os()));
}
