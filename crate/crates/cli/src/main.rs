fn main() {
    std::process::exit(antispoof_cli::main_from(std::env::args_os()));
}
