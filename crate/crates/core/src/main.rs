fn main() {
    std::process::exit(shellwalk::cli::run());
}
