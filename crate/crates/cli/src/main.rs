fn main() {
    std::process::exit(srnn_cli::run(std::env::args_os()));
}
