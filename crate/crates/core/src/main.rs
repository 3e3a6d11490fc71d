fn main() -> std::process::ExitCode {
    impactsel::cli::main()
}
