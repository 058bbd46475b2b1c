fn main() {
    std::process::exit(wdm_diffractive::cli::main_with(std::env::args_os()));
}
