fn main() -> std::process::ExitCode {
    splitpoint::cli::run(std::env::args_os())
}
