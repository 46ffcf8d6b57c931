fn main() { panelbin::cli::main(); }
