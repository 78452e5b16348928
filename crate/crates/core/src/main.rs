fn main() {
    std::process::exit(fermion_equil::cli::main_with_args(std::env::args_os()));
}
