fn main() {
    std::process::exit(dpgm::experiments::cli::run(std::env::args_os()));
}
