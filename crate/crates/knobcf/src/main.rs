fn main() -> std::process::ExitCode {
    knobcf::cli::main()
}
