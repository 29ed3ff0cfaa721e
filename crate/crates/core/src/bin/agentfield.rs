fn main() {
    std::process::exit(agentfield::cli::main());
}
