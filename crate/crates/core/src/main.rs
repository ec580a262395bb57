fn main() {
    std::process::exit(cellscan::cli::run_cli(std::env::args_os()));
}
