fn main() {
    std::process::exit(rdbm::cli::run());
}
