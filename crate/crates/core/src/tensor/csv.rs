//! Plain-text tensor format: a `# shape: d0 d1 ...` header, then one
//! comma-separated line per leading-axis slice.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub fn write_tensor_csv(t: &Tensor) -> String {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!("# shape: {}\n", dims.join(" "));
    let lead = if t.shape().len() > 1 { t.shape()[0] } else { 1 };
    let width = t.len() / lead;
    for row in t.data().chunks(width) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_tensor_csv(text: &str) -> Result<Tensor> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# shape:"))
        .ok_or_else(|| Error::Parse("missing `# shape:` header".into()))?;
    let shape = header
        .split_whitespace()
        .map(|d| d.parse::<usize>().map_err(|e| Error::Parse(format!("shape: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{cell:?}: {e}")))?;
            data.push(v);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Writes atomically through a sibling temp file.
pub fn write_csv(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), write_tensor_csv(t).as_bytes())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_csv(&fs::read_to_string(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = crate::Rng::seed(4);
        let t = rng.normal_tensor(&[3, 2, 2]);
        let text = write_tensor_csv(&t);
        assert!(text.starts_with("# shape: 3 2 2\n"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_tensor_csv(&text).unwrap(), t);
    }

    #[test]
    fn bad_header() {
        assert!(read_tensor_csv("1,2\n").is_err());
    }
}
