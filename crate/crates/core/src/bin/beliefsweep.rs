fn main() {
    std::process::exit(beliefsweep::cli::run(std::env::args_os()));
}
