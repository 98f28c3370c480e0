fn main() {
    std::process::exit(underreport::cli::main_with_args(std::env::args_os()));
}
