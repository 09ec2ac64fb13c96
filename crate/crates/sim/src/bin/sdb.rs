fn main() {
    std::process::exit(renewal_sim::cli::main_with_args(std::env::args_os()));
}
