use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{EvaluationRecord, ExperimentError};

pub const SCORES_FILE: &str = "scores.txt";
pub const SCORES_HEADER: &str = "steps\tepisodes\tmean\tstdev\tmax\tmin";
/// Per-episode training returns, one row per finished episode.
pub const EPISODES_FILE: &str = "episodes.txt";
const EPISODES_HEADER: &str = "steps\tenv\treturn\tlength";

/// One parsed row of `scores.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub steps: u64,
    pub episodes: u64,
    pub mean: f64,
    pub stdev: f64,
    pub max: f64,
    pub min: f64,
}

impl From<&EvaluationRecord> for ScoreRow {
    fn from(r: &EvaluationRecord) -> Self {
        Self {
            steps: r.step,
            episodes: r.train_episodes,
            mean: r.mean,
            stdev: r.std,
            max: r.max,
            min: r.min,
        }
    }
}

fn row_line(r: &ScoreRow) -> String {
    format!("{}\t{}\t{}\t{}\t{}\t{}\n", r.steps, r.episodes, r.mean, r.stdev, r.max, r.min)
}

/// Appends rows to `scores.txt` and `episodes.txt`, flushing after each row.
#[derive(Debug)]
pub struct ScoreLog {
    scores: File,
    episodes: File,
}

impl ScoreLog {
    pub fn create(out_dir: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(out_dir)?;
        let open = |name: &str, header: &str| -> Result<File, ExperimentError> {
            let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(out_dir.join(name))?;
            writeln!(f, "{header}")?;
            f.flush()?;
            Ok(f)
        };
        Ok(Self {
            scores: open(SCORES_FILE, SCORES_HEADER)?,
            episodes: open(EPISODES_FILE, EPISODES_HEADER)?,
        })
    }

    pub fn append(&mut self, record: &EvaluationRecord) -> Result<(), ExperimentError> {
        self.scores.write_all(row_line(&record.into()).as_bytes())?;
        self.scores.flush()?;
        Ok(())
    }

    pub fn episode(&mut self, steps: u64, env: usize, ret: f64, length: u64) -> Result<(), ExperimentError> {
        writeln!(self.episodes, "{steps}\t{env}\t{ret}\t{length}")?;
        self.episodes.flush()?;
        Ok(())
    }
}

/// Writes a complete `scores.txt` for `records`.
pub fn write_scores(out_dir: &Path, records: &[EvaluationRecord]) -> Result<(), ExperimentError> {
    fs::create_dir_all(out_dir)?;
    let mut text = format!("{SCORES_HEADER}\n");
    for r in records {
        text.push_str(&row_line(&r.into()));
    }
    fs::write(out_dir.join(SCORES_FILE), text)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, ExperimentError> {
    let bad = |line: &str| ExperimentError::InvalidConfig(format!("malformed scores row {line:?}"));
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != SCORES_HEADER {
                return Err(bad(&line));
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(&line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&line));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(&line));
        rows.push(ScoreRow {
            steps: int(f[0])?,
            episodes: int(f[1])?,
            mean: num(f[2])?,
            stdev: num(f[3])?,
            max: num(f[4])?,
            min: num(f[5])?,
        });
    }
    Ok(rows)
}
