fn main() {
    std::process::exit(snn_bci::cli::main_with_args(std::env::args_os()));
}
