fn main() {
    std::process::exit(pmp_cli::main_with(std::env::args_os()));
}
