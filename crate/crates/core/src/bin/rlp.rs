fn main() {
    std::process::exit(rlp_core::cli::run(std::env::args_os()));
}
