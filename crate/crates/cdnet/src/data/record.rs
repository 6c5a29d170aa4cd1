use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{CdnetError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BehaviorType {
    /// Page view, i.e. a click.
    Pv,
    Buy,
    Cart,
    Fav,
}

impl BehaviorType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "pv" => Some(BehaviorType::Pv),
            "buy" => Some(BehaviorType::Buy),
            "cart" => Some(BehaviorType::Cart),
            "fav" => Some(BehaviorType::Fav),
            _ => None,
        }
    }
}

/// One line of the behavior log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub category: String,
    pub behavior: BehaviorType,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseLimits {
    /// Stop after this many well-formed records (subsampling).
    pub max_records: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub records: Vec<InteractionRecord>,
    pub malformed: usize,
    pub total_lines: usize,
}

/// Read a comma-separated behavior log with columns
/// `user_id,item_id,category_id,behavior_type,timestamp`.
///
/// Malformed lines are counted and skipped; more than 1% malformed is a
/// data-quality error.
pub fn parse_log(path: &Path, limits: &ParseLimits) -> Result<ParsedLog> {
    let file = File::open(path).map_err(|source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = ParsedLog::default();
    for line in reader.lines() {
        let line = line.map_err(|source| CdnetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        out.total_lines += 1;
        match parse_line(&line) {
            Some(rec) => out.records.push(rec),
            None => out.malformed += 1,
        }
        if let Some(max) = limits.max_records {
            if out.records.len() >= max {
                break;
            }
        }
    }
    if out.malformed * 100 > out.total_lines {
        return Err(CdnetError::DataQuality {
            path: path.to_path_buf(),
            malformed: out.malformed,
            total: out.total_lines,
        });
    }
    Ok(out)
}

fn parse_line(line: &str) -> Option<InteractionRecord> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut fields = line.split(',');
    let user = fields.next()?;
    let item = fields.next()?;
    let category = fields.next()?;
    let behavior = BehaviorType::parse(fields.next()?)?;
    let ts = fields.next()?;
    if fields.next().is_some() {
        return None; // more than five columns
    }
    if user.is_empty() || item.is_empty() || category.is_empty() {
        return None;
    }
    let timestamp: i64 = ts.trim().parse().ok()?;
    if timestamp < 0 {
        return None;
    }
    Some(InteractionRecord {
        user: user.to_string(),
        item: item.to_string(),
        category: category.to_string(),
        behavior,
        timestamp: timestamp as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!(
            "cdnet-parse-test-{}-{}.csv",
            std::process::id(),
            content.len()
        ));
        let mut f = File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_well_formed_line() {
        let rec = parse_line("1,200,30,pv,1511544070").unwrap();
        assert_eq!(rec.user, "1");
        assert_eq!(rec.item, "200");
        assert_eq!(rec.category, "30");
        assert_eq!(rec.behavior, BehaviorType::Pv);
        assert_eq!(rec.timestamp, 1511544070);
    }

    #[test]
    fn four_fields_is_malformed() {
        assert!(parse_line("1,200,30,pv").is_none());
        assert!(parse_line("1,200,30,swipe,1511544070").is_none());
        assert!(parse_line("1,200,30,pv,-5").is_none());
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let path = write_tmp("");
        let log = parse_log(&path, &ParseLimits::default()).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.malformed, 0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn malformed_counted_and_thresholded() {
        let mut content = String::new();
        for i in 0..100 {
            content.push_str(&format!("1,{i},30,pv,1000\n"));
        }
        content.push_str("broken line\n");
        let path = write_tmp(&content);
        let log = parse_log(&path, &ParseLimits::default()).unwrap();
        assert_eq!(log.malformed, 1);
        assert_eq!(log.records.len(), 100);
        std::fs::remove_file(path).ok();

        // 2 bad of 52 lines exceeds 1%.
        let mut content = String::new();
        for i in 0..50 {
            content.push_str(&format!("1,{i},30,pv,1000\n"));
        }
        content.push_str("bad\nbad\n");
        let path = write_tmp(&content);
        let err = parse_log(&path, &ParseLimits::default()).unwrap_err();
        assert!(matches!(err, CdnetError::DataQuality { .. }));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_log(Path::new("/nonexistent/q.csv"), &ParseLimits::default()).unwrap_err();
        assert!(matches!(err, CdnetError::Io { .. }));
    }
}
