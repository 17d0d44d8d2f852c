fn main() {
    std::process::exit(histfun::cli::run());
}
