fn main() {
    std::process::exit(lattice_cli::dispatch(std::env::args_os()));
}
