//! CSV ingestion. Either one file per sample with a `value` column, or one
//! file with `group` (0 or 1) and `value` columns. A header row is required.

use std::path::Path;

use crate::CliError;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::Input(format!("{}: missing `{name}` column", path.display())))
}

fn parse_value(field: &str, path: &Path, line: u64) -> Result<f64, CliError> {
    field
        .parse::<f64>()
        .map_err(|_| CliError::Input(format!("{}:{line}: `{field}` is not a number", path.display())))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Values of the `value` column.
pub fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let col = column(&headers, "value", path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let field = rec.get(col).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        out.push(parse_value(field, path, line_of(&rec))?);
    }
    Ok(out)
}

/// Samples 0 and 1 from a `group,value` file.
pub fn read_grouped(path: &Path) -> Result<[Vec<f64>; 2], CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let gcol = column(&headers, "group", path)?;
    let vcol = column(&headers, "value", path)?;
    let mut out = [Vec::new(), Vec::new()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&rec);
        let group = match rec.get(gcol).unwrap_or("") {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(CliError::Input(format!(
                    "{}:{line}: group must be 0 or 1, got `{other}`",
                    path.display()
                )))
            }
        };
        out[group].push(parse_value(rec.get(vcol).unwrap_or(""), path, line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn value_column_anywhere() {
        let f = file("id,value\n1,0\n2, 3.5\n3,\n4,1e-2\n");
        assert_eq!(read_values(f.path()).unwrap(), vec![0.0, 3.5, 0.01]);
    }

    #[test]
    fn grouped_file() {
        let f = file("group,value\n0,1.0\n1,2.0\n0,0\n");
        let [a, b] = read_grouped(f.path()).unwrap();
        assert_eq!((a, b), (vec![1.0, 0.0], vec![2.0]));
        let bad = file("group,value\n2,1.0\n");
        assert!(matches!(read_grouped(bad.path()), Err(CliError::Input(_))));
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(matches!(read_values(file("x\n1\n").path()), Err(CliError::Input(_))));
        assert!(matches!(
            read_values(file("value\nabc\n").path()),
            Err(CliError::Input(_))
        ));
        assert!(matches!(
            read_values(Path::new("/nonexistent/zz.csv")),
            Err(CliError::Io(_))
        ));
    }
}
