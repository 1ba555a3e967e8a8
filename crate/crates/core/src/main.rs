fn main() -> std::process::ExitCode {
    xane_core::cli::main()
}
