fn main() {
    std::process::exit(txmeta::run_cli(std::env::args_os()));
}
