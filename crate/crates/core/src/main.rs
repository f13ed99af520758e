fn main() -> std::process::ExitCode {
    slicelens::server::cli::main()
}
