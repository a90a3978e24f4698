fn main() {
    std::process::exit(evnet_cli::run(std::env::args_os()));
}
