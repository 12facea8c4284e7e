fn main() {
    std::process::exit(gp_bounds::cli::run());
}
