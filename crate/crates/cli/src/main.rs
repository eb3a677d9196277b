fn main() {
    std::process::exit(texsplat_cli::run(std::env::args_os()));
}
