fn main() -> std::process::ExitCode {
    toskose::cli::run(std::env::args_os().collect())
}
