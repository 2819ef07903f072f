fn main() {
    std::process::exit(safeshield::harness::cli::run(std::env::args_os()));
}
