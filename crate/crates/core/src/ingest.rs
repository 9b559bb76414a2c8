//! Parsing and validation of raw season data files.
//!
//! Two inputs are supported: a match file with one row per scheduled game
//! (including canceled ones, which are kept out of inference but reported),
//! and a previous-season table with per-team scored/received totals used to
//! seed first-week abilities.

use std::fmt::Write as _;
use std::path::Path;

use crate::csvio;

/// Match CSV header. An optional trailing `y_raw` column carries a
/// continuous raw score difference for synthetic data.
pub const MATCH_HEADER: &str = "round,home_team,away_team,home_score,away_score,home_tries,\
away_tries,home_conv_att,home_pen_att,home_drop_att,away_conv_att,away_pen_att,away_drop_att,\
attendance,weekend,canceled";

/// Previous-season CSV header.
pub const PREV_HEADER: &str = "team,scored,received";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad header: expected `{expected}`, found `{found}`")]
    Header {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: {reason}")]
    Row {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: no teams")]
    NoTeams { path: String },
    #[error("{path}: team `{team}` listed twice")]
    DuplicateTeam { path: String, team: String },
}

/// One scheduled game as it appears in the match file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub round: u32,
    pub home_team: String,
    pub away_team: String,
    pub home_score: u32,
    pub away_score: u32,
    pub home_tries: u32,
    pub away_tries: u32,
    pub home_conv_att: u32,
    pub home_pen_att: u32,
    pub home_drop_att: u32,
    pub away_conv_att: u32,
    pub away_pen_att: u32,
    pub away_drop_att: u32,
    pub attendance: bool,
    pub weekend: bool,
    pub canceled: bool,
    /// Continuous raw score difference, present only in synthetic files.
    pub y_raw: Option<f64>,
}

impl MatchRecord {
    /// Raw home-minus-away score difference in points; `y_raw` wins when set.
    pub fn raw_diff(&self) -> f64 {
        self.y_raw
            .unwrap_or(f64::from(self.home_score) - f64::from(self.away_score))
    }
}

/// A parsed season: team index plus all scheduled records in file order.
///
/// Team indices are first-appearance order in the file and every
/// downstream array is keyed by them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub teams: Vec<String>,
    records: Vec<MatchRecord>,
}

impl Dataset {
    pub fn new(teams: Vec<String>, records: Vec<MatchRecord>) -> Self {
        Dataset { teams, records }
    }

    /// All records in file order, canceled ones included.
    pub fn records(&self) -> &[MatchRecord] {
        &self.records
    }

    /// Non-canceled games in file order; these are the inference inputs.
    pub fn played(&self) -> impl Iterator<Item = &MatchRecord> {
        self.records.iter().filter(|m| !m.canceled)
    }

    pub fn canceled(&self) -> impl Iterator<Item = &MatchRecord> {
        self.records.iter().filter(|m| m.canceled)
    }

    pub fn nteams(&self) -> usize {
        self.teams.len()
    }

    /// Count of non-canceled games.
    pub fn ngames(&self) -> usize {
        self.played().count()
    }

    pub fn team_index(&self, name: &str) -> Option<usize> {
        self.teams.iter().position(|t| t == name)
    }

    /// Serializes back to the match CSV schema. The `y_raw` column is
    /// emitted only when at least one record carries it.
    pub fn to_csv_string(&self) -> String {
        let with_y = self.records.iter().any(|m| m.y_raw.is_some());
        let mut out = String::from(MATCH_HEADER);
        if with_y {
            out.push_str(",y_raw");
        }
        out.push('\n');
        for m in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                m.round,
                csvio::escape(&m.home_team),
                csvio::escape(&m.away_team),
                m.home_score,
                m.away_score,
                m.home_tries,
                m.away_tries,
                m.home_conv_att,
                m.home_pen_att,
                m.home_drop_att,
                m.away_conv_att,
                m.away_pen_att,
                m.away_drop_att,
                u8::from(m.attendance),
                u8::from(m.weekend),
                u8::from(m.canceled),
            );
            if with_y {
                match m.y_raw {
                    Some(y) => {
                        let _ = write!(out, ",{y}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Non-fatal findings from a parse: how many games were canceled and which
/// lines duplicated an earlier row exactly (duplicates are kept).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub canceled: usize,
    pub duplicate_lines: Vec<usize>,
}

impl ParseReport {
    pub fn warnings(&self) -> Vec<String> {
        self.duplicate_lines
            .iter()
            .map(|line| format!("line {line}: exact duplicate of an earlier row (kept)"))
            .collect()
    }
}

/// Previous-season totals, one row per team present in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevSeasonTable {
    rows: Vec<(String, u64, u64)>,
}

impl PrevSeasonTable {
    pub fn new(rows: Vec<(String, u64, u64)>) -> Self {
        PrevSeasonTable { rows }
    }

    /// (team, scored, received) rows in file order.
    pub fn rows(&self) -> &[(String, u64, u64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, team: &str) -> Option<(u64, u64)> {
        self.rows
            .iter()
            .find(|(t, _, _)| t == team)
            .map(|&(_, s, r)| (s, r))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(PREV_HEADER);
        out.push('\n');
        for (team, scored, received) in &self.rows {
            let _ = writeln!(out, "{},{scored},{received}", csvio::escape(team));
        }
        out
    }
}

/// Parses a match file. Returns the dataset plus a report with the
/// canceled-game count and duplicate-row warnings.
pub fn parse_matches(path: &Path) -> Result<(Dataset, ParseReport), IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_matches_str(&text, &path.display().to_string())
}

/// Same as [`parse_matches`] on in-memory text; `origin` labels errors.
pub fn parse_matches_str(text: &str, origin: &str) -> Result<(Dataset, ParseReport), IngestError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| IngestError::Header {
        path: origin.to_string(),
        expected: MATCH_HEADER.to_string(),
        found: String::new(),
    })?;
    let header = header.trim_end_matches('\r');
    let with_y = match header {
        h if h == MATCH_HEADER => false,
        h if h == format!("{MATCH_HEADER},y_raw") => true,
        found => {
            return Err(IngestError::Header {
                path: origin.to_string(),
                expected: MATCH_HEADER.to_string(),
                found: found.to_string(),
            })
        }
    };
    let ncols = if with_y { 17 } else { 16 };

    let mut teams: Vec<String> = Vec::new();
    let mut records: Vec<MatchRecord> = Vec::new();
    let mut report = ParseReport::default();
    let mut seen_rows: std::collections::HashSet<String> = std::collections::HashSet::new();

    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |reason: String| IngestError::Row {
            path: origin.to_string(),
            line: line_no,
            reason,
        };
        let cells = csvio::split_line(line).map_err(&row_err)?;
        if cells.len() != ncols {
            return Err(row_err(format!(
                "expected {ncols} columns, found {}",
                cells.len()
            )));
        }

        let count = |i: usize, name: &str| -> Result<u32, IngestError> {
            cells[i].trim().parse::<u32>().map_err(|_| {
                row_err(format!(
                    "column {name}: `{}` is not a nonnegative integer",
                    cells[i]
                ))
            })
        };
        let flag = |i: usize, name: &str| -> Result<bool, IngestError> {
            match cells[i].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(row_err(format!("column {name}: `{other}` is not 0 or 1"))),
            }
        };

        let round = count(0, "round")?;
        if round == 0 {
            return Err(row_err("column round: must be positive".to_string()));
        }
        let home_team = cells[1].trim().to_string();
        let away_team = cells[2].trim().to_string();
        if home_team.is_empty() || away_team.is_empty() {
            return Err(row_err("empty team name".to_string()));
        }
        if home_team == away_team {
            return Err(row_err(format!("home and away team are both `{home_team}`")));
        }

        let record = MatchRecord {
            round,
            home_team,
            away_team,
            home_score: count(3, "home_score")?,
            away_score: count(4, "away_score")?,
            home_tries: count(5, "home_tries")?,
            away_tries: count(6, "away_tries")?,
            home_conv_att: count(7, "home_conv_att")?,
            home_pen_att: count(8, "home_pen_att")?,
            home_drop_att: count(9, "home_drop_att")?,
            away_conv_att: count(10, "away_conv_att")?,
            away_pen_att: count(11, "away_pen_att")?,
            away_drop_att: count(12, "away_drop_att")?,
            attendance: flag(13, "attendance")?,
            weekend: flag(14, "weekend")?,
            canceled: flag(15, "canceled")?,
            y_raw: if with_y {
                let cell = cells[16].trim();
                if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        row_err(format!("column y_raw: `{cell}` is not a number"))
                    })?)
                }
            } else {
                None
            },
        };

        if record.canceled && (record.home_score != 0 || record.away_score != 0) {
            return Err(row_err(
                "canceled game must carry a 0-0 score".to_string(),
            ));
        }

        if !seen_rows.insert(line.to_string()) {
            report.duplicate_lines.push(line_no);
        }

        for name in [&record.home_team, &record.away_team] {
            if !teams.iter().any(|t| t == name) {
                teams.push(name.clone());
            }
        }
        if record.canceled {
            report.canceled += 1;
        }
        records.push(record);
    }

    Ok((Dataset { teams, records }, report))
}

/// Parses a previous-season table (`team,scored,received`).
pub fn parse_prev_season(path: &Path) -> Result<PrevSeasonTable, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_prev_season_str(&text, &path.display().to_string())
}

/// Same as [`parse_prev_season`] on in-memory text.
pub fn parse_prev_season_str(text: &str, origin: &str) -> Result<PrevSeasonTable, IngestError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| IngestError::NoTeams {
        path: origin.to_string(),
    })?;
    let header = header.trim_end_matches('\r');
    if header != PREV_HEADER {
        return Err(IngestError::Header {
            path: origin.to_string(),
            expected: PREV_HEADER.to_string(),
            found: header.to_string(),
        });
    }
    let mut rows: Vec<(String, u64, u64)> = Vec::new();
    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |reason: String| IngestError::Row {
            path: origin.to_string(),
            line: line_no,
            reason,
        };
        let cells = csvio::split_line(line).map_err(&row_err)?;
        if cells.len() != 3 {
            return Err(row_err(format!("expected 3 columns, found {}", cells.len())));
        }
        let team = cells[0].trim().to_string();
        if team.is_empty() {
            return Err(row_err("empty team name".to_string()));
        }
        if rows.iter().any(|(t, _, _)| *t == team) {
            return Err(IngestError::DuplicateTeam {
                path: origin.to_string(),
                team,
            });
        }
        let num = |i: usize, name: &str| -> Result<u64, IngestError> {
            cells[i].trim().parse::<u64>().map_err(|_| {
                row_err(format!(
                    "column {name}: `{}` is not a nonnegative integer",
                    cells[i]
                ))
            })
        };
        rows.push((team, num(1, "scored")?, num(2, "received")?));
    }
    if rows.is_empty() {
        return Err(IngestError::NoTeams {
            path: origin.to_string(),
        });
    }
    Ok(PrevSeasonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(
        round: u32,
        home: &str,
        away: &str,
        hs: u32,
        as_: u32,
        canceled: bool,
    ) -> String {
        format!("{round},{home},{away},{hs},{as_},3,2,3,2,0,2,1,0,1,1,{}", u8::from(canceled))
    }

    #[test]
    fn excludes_canceled_from_played() {
        let text = format!(
            "{MATCH_HEADER}\n{}\n{}\n{}\n",
            row(1, "A", "B", 20, 10, false),
            row(1, "C", "D", 0, 0, true),
            row(2, "A", "C", 15, 15, false),
        );
        let (ds, report) = parse_matches_str(&text, "test").unwrap();
        assert_eq!(ds.ngames(), 2);
        assert_eq!(report.canceled, 1);
        assert_eq!(ds.records().len(), 3);
        assert_eq!(ds.teams, vec!["A", "B", "C", "D"]);
    }

    #[test]
    fn rejects_negative_count_naming_row() {
        let text = format!(
            "{MATCH_HEADER}\n1,A,B,20,10,-1,2,3,2,0,2,1,0,1,1,0\n"
        );
        let err = parse_matches_str(&text, "test").unwrap_err();
        match err {
            IngestError::Row { line, reason, .. } => {
                assert_eq!(line, 2);
                assert!(reason.contains("home_tries"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn full_league_season_counts() {
        // 12 teams, 22 rounds, 6 games per round = 132 scheduled; cancel 10.
        let teams: Vec<String> = (0..12).map(|i| format!("T{i:02}")).collect();
        let mut text = String::from(MATCH_HEADER);
        text.push('\n');
        let mut scheduled = 0;
        for round in 1..=22u32 {
            // rotate pairings so home/away vary
            for pair in 0..6usize {
                let h = (round as usize + pair) % 12;
                let a = (round as usize + 6 + pair) % 12;
                scheduled += 1;
                let canceled = scheduled <= 10;
                let (hs, as_) = if canceled { (0, 0) } else { (20, 10) };
                text.push_str(&row(round, &teams[h], &teams[a], hs, as_, canceled));
                text.push('\n');
            }
        }
        assert_eq!(scheduled, 132);
        let (ds, report) = parse_matches_str(&text, "season").unwrap();
        assert_eq!(ds.nteams(), 12);
        assert_eq!(ds.ngames(), 122);
        assert_eq!(report.canceled, 10);
    }

    #[test]
    fn duplicate_row_warns_but_keeps() {
        let text = format!(
            "{MATCH_HEADER}\n{r}\n{r}\n",
            r = row(1, "A", "B", 20, 10, false)
        );
        let (ds, report) = parse_matches_str(&text, "test").unwrap();
        assert_eq!(ds.ngames(), 2);
        assert_eq!(report.duplicate_lines, vec![3]);
        assert_eq!(report.warnings().len(), 1);
    }

    #[test]
    fn rejects_same_team_both_sides() {
        let text = format!("{MATCH_HEADER}\n{}\n", row(1, "A", "A", 20, 10, false));
        assert!(matches!(
            parse_matches_str(&text, "t").unwrap_err(),
            IngestError::Row { .. }
        ));
    }

    #[test]
    fn rejects_canceled_with_score() {
        let text = format!("{MATCH_HEADER}\n{}\n", row(1, "A", "B", 7, 0, true));
        let err = parse_matches_str(&text, "t").unwrap_err();
        assert!(err.to_string().contains("0-0"));
    }

    #[test]
    fn rejects_bad_header() {
        let err = parse_matches_str("round,foo\n", "t").unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
    }

    #[test]
    fn prev_season_parses_and_validates() {
        let table =
            parse_prev_season_str("team,scored,received\nA,30,10\nB,20,20\n", "p").unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.get("A"), Some((30, 10)));

        assert!(matches!(
            parse_prev_season_str("team,scored,received\n", "p").unwrap_err(),
            IngestError::NoTeams { .. }
        ));
        assert!(matches!(
            parse_prev_season_str("team,scored,received\nA,1,2\nA,3,4\n", "p").unwrap_err(),
            IngestError::DuplicateTeam { .. }
        ));
        assert!(matches!(
            parse_prev_season_str("team,scored,received\nA,x,2\n", "p").unwrap_err(),
            IngestError::Row { .. }
        ));
    }

    prop_compose! {
        fn arb_record()(
            round in 1u32..23,
            home in 0usize..6,
            away_off in 1usize..6,
            hs in 0u32..80,
            as_ in 0u32..80,
            tries in proptest::array::uniform2(0u32..10),
            kicks in proptest::array::uniform6(0u32..8),
            attendance: bool,
            weekend: bool,
            canceled: bool,
            y_raw in proptest::option::of(-40.0f64..40.0),
        ) -> MatchRecord {
            let away = (home + away_off) % 6;
            MatchRecord {
                round,
                home_team: format!("T{home}"),
                away_team: format!("T{away}"),
                home_score: if canceled { 0 } else { hs },
                away_score: if canceled { 0 } else { as_ },
                home_tries: tries[0],
                away_tries: tries[1],
                home_conv_att: kicks[0],
                home_pen_att: kicks[1],
                home_drop_att: kicks[2],
                away_conv_att: kicks[3],
                away_pen_att: kicks[4],
                away_drop_att: kicks[5],
                attendance,
                weekend,
                canceled,
                y_raw,
            }
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip(records in proptest::collection::vec(arb_record(), 1..40)) {
            let mut teams = Vec::new();
            for r in &records {
                for t in [&r.home_team, &r.away_team] {
                    if !teams.iter().any(|x: &String| x == t) {
                        teams.push(t.clone());
                    }
                }
            }
            let ds = Dataset::new(teams, records);
            let (reparsed, _) = parse_matches_str(&ds.to_csv_string(), "rt").unwrap();
            prop_assert_eq!(ds, reparsed);
        }
    }
}
