use std::process::ExitCode;

use clap::Parser;
use vitstem_cli::{execute, Cli};

// Training churns through large short-lived buffers; the system allocator
// returns them to the kernel on every step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match execute(&cli, &mut |line| {
        if !cli.json {
            eprintln!("{line}");
        }
    }) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string(&out).expect("serializable output"));
            } else {
                print!("{}", out.text);
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::json!({ "command": name, "ok": false, "error": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
