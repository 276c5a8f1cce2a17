mod args;
mod commands;
mod manifest;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use args::{Cli, Command, Common};
use commands::{Done, Status};
use manifest::{checksums, RunManifest};

/// Exit status for malformed invocations.
const EX_USAGE: u8 = 64;

fn explicit_ids(matches: &ArgMatches, into: &mut HashSet<String>) {
    for id in matches.ids() {
        if matches.value_source(id.as_str()) == Some(ValueSource::CommandLine) {
            into.insert(id.to_string());
        }
    }
    if let Some((_, sub)) = matches.subcommand() {
        explicit_ids(sub, into);
    }
}

/// Overlays `--config` onto the parsed flags: keys from the file apply
/// unless the same setting was given on the command line.
fn resolve<T: Serialize + DeserializeOwned>(
    args: &T,
    common: &Common,
    explicit: &HashSet<String>,
) -> anyhow::Result<(T, Common, Value)> {
    let mut merged = Map::new();
    for v in [serde_json::to_value(common)?, serde_json::to_value(args)?] {
        if let Value::Object(m) = v {
            merged.extend(m);
        }
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let Value::Object(file) = serde_json::from_str(&text)? else {
            anyhow::bail!("{} must hold a JSON object", path.display());
        };
        for (k, v) in file {
            anyhow::ensure!(merged.contains_key(&k), "unknown setting {k:?} in {}", path.display());
            if !explicit.contains(&k) {
                merged.insert(k, v);
            }
        }
    }
    let value = Value::Object(merged);
    let args: T = serde_json::from_value(value.clone())?;
    let mut resolved: Common = serde_json::from_value(value.clone())?;
    resolved.config = common.config.clone();
    Ok((args, resolved, value))
}

fn dispatch(cli: Cli, explicit: &HashSet<String>) -> anyhow::Result<(Done, Common, Value)> {
    macro_rules! run {
        ($args:expr, |$a:ident, $c:ident| $body:expr) => {{
            let ($a, $c, value) = resolve($args, &cli.common, explicit)?;
            let done = $body;
            (done?, $c, value)
        }};
    }
    Ok(match &cli.command {
        Command::Synth(a) => run!(a, |a, c| commands::synth(&a, &c)),
        Command::Extract(a) => run!(a, |a, c| commands::extract(&a, &c)),
        Command::Mi(a) => run!(a, |a, c| commands::mi(&a, &c)),
        Command::Ie(a) => run!(a, |a, c| commands::ie(&a, &c)),
        Command::Oracle(a) => run!(a, |a, c| commands::oracle(&a, &c)),
        Command::Validate(a) => run!(a, |a, _c| commands::validate(&a)),
        Command::Describe(a) => run!(a, |a, _c| commands::describe_store(&a)),
        Command::Report(a) => run!(a, |a, c| commands::report(&a, &c)),
        Command::Score(a) => run!(a, |a, _c| commands::score(&a)),
    })
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EX_USAGE),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EX_USAGE);
        }
    };
    let mut explicit = HashSet::new();
    explicit_ids(&matches, &mut explicit);

    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let subcommand = cli.command.name();
    let result = dispatch(cli, &explicit).and_then(|(done, common, config)| {
        if let Some(dir) = &done.manifest_dir {
            let manifest = RunManifest {
                subcommand: subcommand.to_string(),
                config,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seeds: common.seed.into_iter().collect(),
                inputs: checksums(&done.inputs)?,
                outputs: checksums(&done.outputs)?,
                started_unix,
                wall_clock_secs: started.elapsed().as_secs_f64(),
                exit_status: done.status.as_str().to_string(),
            };
            manifest.write(dir)?;
        }
        Ok(done.status)
    });
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
