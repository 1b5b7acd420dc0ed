use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gan::TrainHistory;
use crate::pipeline::ReportBundle;

pub const HISTORY_HEADER: [&str; 7] = ["step", "critic_loss", "gen_loss", "gp", "drift", "wall_clock_s", "metric"];
const LOCK_NAME: &str = ".m2m.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.display().to_string())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in &history.records {
        w.write_record([
            r.step.to_string(),
            r.critic_loss.to_string(),
            r.gen_loss.to_string(),
            r.gp.to_string(),
            r.drift.to_string(),
            r.wall_clock_s.to_string(),
            r.metric.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<TrainHistory> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(HISTORY_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
    let mut history = TrainHistory::default();
    for row in r.records() {
        let row = row?;
        history.records.push(crate::gan::HistoryRecord {
            step: row[0].parse().map_err(|e| Error::Format(format!("step {:?}: {e}", &row[0])))?,
            critic_loss: parse(&row[1])?,
            gen_loss: parse(&row[2])?,
            gp: parse(&row[3])?,
            drift: parse(&row[4])?,
            wall_clock_s: parse(&row[5])?,
            metric: if row[6].is_empty() { None } else { Some(parse(&row[6])?) },
        });
    }
    Ok(history)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes the config echo, one history CSV per run, bound reports and a
/// summary. Returns the written paths in order.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let config = dir.join("config.json");
    write_json(&bundle.config, &config)?;
    written.push(config);
    for run in &bundle.runs {
        let stem = format!("{}_seed{}", run.method.name(), run.seed);
        let csv = dir.join(format!("history_{stem}.csv"));
        write_history_csv(&run.history, &csv)?;
        written.push(csv);
        if let Some(bound) = &run.bound {
            let p = dir.join(format!("bound_{stem}.json"));
            write_json(bound, &p)?;
            written.push(p);
        }
    }
    if !bundle.runs.is_empty() {
        let p = dir.join("summary.json");
        write_json(&bundle.summary(), &p)?;
        written.push(p);
    }
    Ok(written)
}
