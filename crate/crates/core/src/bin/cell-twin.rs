fn main() {
    std::process::exit(cell_twin::cli::main_with_args(std::env::args_os()));
}
