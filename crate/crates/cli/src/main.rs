fn main() -> std::process::ExitCode {
    fedrot_cli::main_entry()
}
