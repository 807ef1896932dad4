fn main() {
    std::process::exit(delivery_fusion::cli::run(std::env::args_os().collect()));
}
