use clap::Parser;

fn main() -> std::process::ExitCode {
    match soil_pinn_cli::run(soil_pinn_cli::Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
