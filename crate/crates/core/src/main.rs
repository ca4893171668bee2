fn main() {
    std::process::exit(vareg::cli::run());
}
