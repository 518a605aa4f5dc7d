fn main() {
    std::process::exit(photon_memory_cli::run(std::env::args_os()));
}
