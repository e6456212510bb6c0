use std::fs;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use trimlab::report::{config_hash, PlotData};

use crate::config::{RunManifest, TOOL_VERSION};
use crate::{CliError, Common};

/// Files of one run. The first file is the primary report.
pub struct RunOutput {
    pub files: Vec<(&'static str, String)>,
    pub plot: PlotData,
    pub metrics: Value,
    pub partial: bool,
    pub failure: Option<String>,
}

pub fn emit<C: Serialize>(
    command: &str,
    common: &Common,
    config: &C,
    master_seed: Option<u64>,
    started: Instant,
    run: RunOutput,
) -> Result<(), CliError> {
    let config_value = serde_json::to_value(config).expect("config to json");
    let Some(dir) = &common.out else {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        let text = if common.plot_data {
            run.plot.to_csv()
        } else {
            run.files[0].1.clone()
        };
        lock.write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(format!("writing stdout: {e}")))?;
        return finish(run.partial, run.failure);
    };
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    let mut names: Vec<String> = run.files.iter().map(|(n, _)| n.to_string()).collect();
    if common.plot_data {
        names.push("plot.csv".into());
    }
    names.push("summary.json".into());
    let manifest = RunManifest {
        command: command.into(),
        tool_version: TOOL_VERSION.into(),
        master_seed,
        config: config_value.clone(),
        outputs: names,
    };
    let mut summary = json!({
        "command": command,
        "config": config_value,
        "config_hash": config_hash(config),
        "partial": run.partial,
        "failure": run.failure,
        "metrics": run.metrics,
    });
    if common.record_wall_time {
        summary["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    }
    let write = |name: &str, body: &str| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
    };
    for (name, body) in &run.files {
        write(name, body)?;
    }
    if common.plot_data {
        write("plot.csv", &run.plot.to_csv())?;
    }
    write("summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    write("manifest.json", &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    finish(run.partial, run.failure)
}

fn finish(partial: bool, failure: Option<String>) -> Result<(), CliError> {
    match failure {
        Some(f) => Err(CliError::Runtime(format!("{f} (partial results written)"))),
        None if partial => Err(CliError::Runtime("interrupted; partial results written".into())),
        None => Ok(()),
    }
}
