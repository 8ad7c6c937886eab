use toolgraph::cli;

fn main() -> anyhow::Result<()> {
    cli::main()
}
