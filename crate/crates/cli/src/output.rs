//! Artifacts are assembled in memory and written together; a failed write
//! removes whatever was already written.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        self.add(name, w.into_inner()?);
        Ok(())
    }

    pub fn json(&mut self, name: &str, obj: Map<String, Value>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let created = !dir.exists();
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = std::fs::write(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                let _ = std::fs::remove_file(&path);
                if created {
                    let _ = std::fs::remove_dir(dir);
                }
                return Err(e).with_context(|| format!("cannot write {}", path.display()));
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Builder for the flat JSON reports.
#[derive(Debug, Default)]
pub struct Report(pub Map<String, Value>);

impl Report {
    pub fn set(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.0.insert(key.to_string(), v.into());
        self
    }

    /// Non-finite numbers become `null`.
    pub fn num(&mut self, key: &str, v: f64) -> &mut Self {
        self.set(key, num(v))
    }

    pub fn nums(&mut self, key: &str, v: &[f64]) -> &mut Self {
        self.set(key, Value::Array(v.iter().map(|&x| num(x)).collect()))
    }
}

pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut a = Artifacts::default();
        a.add("one.csv", b"a\n".to_vec());
        // a name that is a directory path cannot be written as a file
        a.add("missing/two.csv", b"b\n".to_vec());
        assert!(a.write_to(&out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::default();
        a.csv("t.csv", &["x", "y"], vec![vec!["1".into(), "2".into()]]).unwrap();
        let mut r = Report::default();
        r.num("bad", f64::NAN).set("k", 2);
        a.json("r.json", r.0).unwrap();
        a.write_to(dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("t.csv")).unwrap(), "x,y\n1,2\n");
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(v["bad"], Value::Null);
        assert_eq!(v["k"], 2);
    }
}
