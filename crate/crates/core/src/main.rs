fn main() {
    std::process::exit(mc_reorder::cli::main_with_args(std::env::args_os()));
}
