fn main() -> std::process::ExitCode {
    qvnn::cli::main()
}
