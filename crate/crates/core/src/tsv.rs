use std::fs;
use std::path::Path;

/// A tab-separated table with one header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// 1-based line number in the source, header is line 1.
    pub line: usize,
    pub fields: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub(crate) fn read_table(path: &Path) -> std::io::Result<Option<Table>> {
    let text = fs::read_to_string(path)?;
    Ok(parse_table(&text))
}

/// Returns `None` when the input has no header row. Blank lines are skipped.
pub(crate) fn parse_table(text: &str) -> Option<Table> {
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let (_, header) = lines.find(|(_, l)| !l.is_empty())?;
    let header = header.split('\t').map(str::to_owned).collect();
    let rows = lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(line, l)| Row {
            line,
            fields: l.split('\t').map(str::to_owned).collect(),
        })
        .collect();
    Some(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_numbers_are_one_based_and_skip_blanks() {
        let t = parse_table("id\ttweet\n1\ta\n\n2\tb\r\n").unwrap();
        assert_eq!(t.header, vec!["id", "tweet"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].line, 2);
        assert_eq!(t.rows[1].line, 4);
        assert_eq!(t.rows[1].fields, vec!["2", "b"]);
    }

    #[test]
    fn empty_input_has_no_table() {
        assert!(parse_table("").is_none());
        assert!(parse_table("\n\n").is_none());
    }
}
