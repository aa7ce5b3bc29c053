//! Headerless matrix CSV: comma-separated rows, 17-significant-digit
//! floats so values round-trip losslessly.

use xcov_core::DenseMatrix;

pub fn write_matrix(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row = m.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix(text: &str) -> Result<DenseMatrix, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, String> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: bad number '{}': {e}", idx + 1, cell.trim()))
            })
            .collect();
        let row = row?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!(
                    "line {}: expected {} columns, found {}",
                    idx + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("empty matrix file".to_string());
    }
    Ok(DenseMatrix::from_rows(&rows))
}
