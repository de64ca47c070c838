fn main() {
    std::process::exit(jointcheck::cli::parse_and_dispatch(std::env::args_os()));
}
