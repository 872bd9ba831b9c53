fn main() {
    std::process::exit(gibo_harness::cli::main(std::env::args_os()));
}
