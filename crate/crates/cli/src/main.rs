fn main() {
    std::process::exit(dockirl_cli::run(std::env::args_os()));
}
