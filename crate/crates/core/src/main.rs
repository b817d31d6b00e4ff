fn main() {
    std::process::exit(kernelrank::cli::main_with_args(std::env::args_os()));
}
