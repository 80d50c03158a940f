fn main() {
    std::process::exit(mocae::cli::run());
}
