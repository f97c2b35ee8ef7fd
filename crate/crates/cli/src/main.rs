fn main() {
    std::process::exit(hybridloc_cli::run(std::env::args_os()));
}
