fn main() {
    std::process::exit(ion_readout::cli::main_with_args(std::env::args_os()));
}
