fn main() {
    env_logger::init();
    std::process::exit(pcadist::cli::run(std::env::args_os()));
}
