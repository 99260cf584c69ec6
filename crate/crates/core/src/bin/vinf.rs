fn main() -> std::process::ExitCode {
    clipflow::app::main()
}
