use std::process::ExitCode;

fn main() -> ExitCode {
    match laft_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(laft_cli::exit_code(&err) as u8)
        }
    }
}
