fn main() {
    std::process::exit(gdgm::cli::run(std::env::args_os()));
}
