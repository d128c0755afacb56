fn main() {
    std::process::exit(pushblock::cli::run());
}
