fn main() -> std::process::ExitCode {
    arranger::cli::main()
}
