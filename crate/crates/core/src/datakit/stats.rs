use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::record::{Direction, UtteranceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Speech hours for one direction, rounded to one decimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub direction: Direction,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Total speech hours per (direction, split). Rows list English-source
/// directions first.
pub fn dataset_stats<'a>(records: impl IntoIterator<Item = (Split, &'a UtteranceRecord)>) -> StatsTable {
    dataset_stats_with(&[], records)
}

/// Like [`dataset_stats`], but every direction in `directions` gets a row even
/// when it has no records.
pub fn dataset_stats_with<'a>(
    directions: &[Direction],
    records: impl IntoIterator<Item = (Split, &'a UtteranceRecord)>,
) -> StatsTable {
    let mut secs: BTreeMap<(bool, Direction), [f64; 3]> = directions
        .iter()
        .map(|d| ((d.source != "en", d.clone()), [0.0; 3]))
        .collect();
    for (split, r) in records {
        let key = (r.direction.source != "en", r.direction.clone());
        secs.entry(key).or_insert([0.0; 3])[split as usize] += r.duration_s;
    }
    let rows = secs
        .into_iter()
        .map(|((_, direction), s)| StatsRow {
            direction,
            train: round1(s[0] / 3600.0),
            dev: round1(s[1] / 3600.0),
            test: round1(s[2] / 3600.0),
            total: round1(s.iter().sum::<f64>() / 3600.0),
        })
        .collect();
    StatsTable { rows }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9} {:>9}",
            "Direction", "Train", "Dev", "Test", "Total"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>9.1} {:>9.1} {:>9.1} {:>9.1}",
                r.direction.to_string(),
                r.train,
                r.dev,
                r.test,
                r.total
            )?;
        }
        Ok(())
    }
}
