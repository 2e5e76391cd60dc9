fn main() {
    std::process::exit(bnmr::cli::main_with_args(std::env::args_os()));
}
