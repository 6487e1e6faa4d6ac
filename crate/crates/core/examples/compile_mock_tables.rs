//! Compiles a scenario file into mock tables for a dataset.
//!
//! cargo run -p causal-cog --example compile_mock_tables -- \
//!     data/demo/scenario.json data/demo/dataset.jsonl data/demo/mock_tables.json

use std::process::ExitCode;

use causal_cog::backend::scenario::{compile_scenario, Scenario};
use causal_cog::{load_dataset, PromptBuilder};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [scenario, dataset, out] = args.as_slice() else {
        eprintln!("usage: compile_mock_tables <scenario.json> <dataset.jsonl> <out.json>");
        return ExitCode::from(2);
    };
    let run = || -> causal_cog::Result<()> {
        let scenario = Scenario::from_file(scenario)?;
        let samples = load_dataset(dataset)?;
        let tables = compile_scenario(&scenario, &samples, &PromptBuilder::default())?;
        std::fs::write(out, tables.to_json()?).map_err(|e| causal_cog::Error::Io {
            path: out.into(),
            source: e,
        })?;
        eprintln!(
            "wrote {out}: {} generate prompts, {} score prompts",
            tables.generate.len(),
            tables.score.len()
        );
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
