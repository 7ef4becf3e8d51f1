fn main() {
    std::process::exit(periocrack::cli::main_with_args(std::env::args_os()));
}
