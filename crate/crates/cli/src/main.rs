fn main() -> std::process::ExitCode {
    docsift_cli::cli::main_with_args(std::env::args())
}
