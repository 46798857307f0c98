fn main() {
    std::process::exit(averis_cli::run(std::env::args_os()));
}
