//! Long-format panel CSV: `unit,time,y,x1,..,xp`, one row per observation.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ifebreak::{Mat, PanelData};

/// Listed at most this many missing pairs in an error message.
const MAX_LISTED: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub panel: PanelData,
    pub units: Vec<String>,
    pub times: Vec<String>,
}

pub fn ingest_csv(path: &Path) -> Result<Ingested> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ingest_reader(file).with_context(|| format!("reading {}", path.display()))
}

/// Numeric labels sort numerically, anything else lexicographically.
fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().expect("checked"));
    } else {
        labels.sort();
    }
}

pub fn ingest_reader(reader: impl Read) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[0] != "unit" || header[1] != "time" || header[2] != "y" {
        bail!("header must be unit,time,y,x1,..,xp; got {}", header.join(","));
    }
    for (k, name) in header[3..].iter().enumerate() {
        if *name != format!("x{}", k + 1) {
            bail!("column {} should be named x{}, found '{name}'", k + 4, k + 1);
        }
    }
    let p = header.len() - 3;
    let mut rows: Vec<(String, String, Vec<f64>)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // line 1 is the header
        let line = k + 2;
        let rec = rec.with_context(|| format!("row {line}"))?;
        let mut vals = Vec::with_capacity(p + 1);
        for c in 2..header.len() {
            let cell = &rec[c];
            let v: f64 = cell
                .parse()
                .map_err(|_| anyhow!("row {line}, column '{}': cannot parse '{cell}' as a number", header[c]))?;
            if !v.is_finite() {
                bail!("row {line}, column '{}': value is not finite", header[c]);
            }
            vals.push(v);
        }
        rows.push((rec[0].to_string(), rec[1].to_string(), vals));
    }
    if rows.is_empty() {
        bail!("no observations");
    }
    let mut units: Vec<String> = rows.iter().map(|r| r.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut times: Vec<String> = rows.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    sort_labels(&mut units);
    sort_labels(&mut times);
    let ui: HashMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let ti: HashMap<&str, usize> = times.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let (n, t_len) = (units.len(), times.len());
    let mut seen = vec![false; n * t_len];
    let mut y = Mat::zeros(n, t_len);
    let mut x = vec![Mat::zeros(n, t_len); p];
    for (k, (u, t, vals)) in rows.iter().enumerate() {
        let (i, s) = (ui[u.as_str()], ti[t.as_str()]);
        if std::mem::replace(&mut seen[i * t_len + s], true) {
            bail!("row {}: duplicate observation for unit '{u}', time '{t}'", k + 2);
        }
        y[(i, s)] = vals[0];
        for j in 0..p {
            x[j][(i, s)] = vals[j + 1];
        }
    }
    let missing: Vec<String> = (0..n * t_len)
        .filter(|&c| !seen[c])
        .map(|c| format!("({}, {})", units[c / t_len], times[c % t_len]))
        .collect();
    if !missing.is_empty() {
        let shown = missing[..missing.len().min(MAX_LISTED)].join(", ");
        let more = if missing.len() > MAX_LISTED { format!(" and {} more", missing.len() - MAX_LISTED) } else { String::new() };
        bail!("unbalanced panel: missing (unit, time) pairs {shown}{more}");
    }
    let panel = PanelData::new(y, x)?;
    Ok(Ingested { panel, units, times })
}

/// Writes a panel in the format read by [`ingest_reader`].
pub fn write_panel(panel: &PanelData, units: &[String], times: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit".to_string(), "time".into(), "y".into()];
    header.extend((1..=panel.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..panel.n() {
        for t in 0..panel.t_len() {
            let mut rec = vec![units[i].clone(), times[t].clone(), panel.y()[(i, t)].to_string()];
            rec.extend(panel.x().iter().map(|x| x[(i, t)].to_string()));
            w.write_record(&rec)?;
        }
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "unit,time,y,x1\na,1,1.0,0.5\na,2,2.0,0.25\na,3,3.0,1\nb,1,4,2\nb,2,5,3\nb,3,6,4\n";

    #[test]
    fn toy_file() {
        // PanelData needs 4 periods; pad a fourth one
        let text = format!("{TOY}a,4,7,0\nb,4,8,0\n");
        let got = ingest_reader(text.as_bytes()).unwrap();
        assert_eq!(got.units, vec!["a", "b"]);
        assert_eq!(got.times, vec!["1", "2", "3", "4"]);
        assert_eq!(got.panel.y()[(0, 1)], 2.0);
        assert_eq!(got.panel.y()[(1, 2)], 6.0);
        assert_eq!(got.panel.x()[0][(0, 0)], 0.5);
        assert_eq!(got.panel.x()[0][(1, 3)], 0.0);
    }

    #[test]
    fn row_order_does_not_matter() {
        let text = format!("{TOY}a,4,7,0\nb,4,8,0\n");
        let mut lines: Vec<&str> = text.lines().collect();
        let body = &mut lines[1..];
        body.reverse();
        body.swap(0, 3);
        let shuffled = lines.join("\n");
        assert_eq!(ingest_reader(text.as_bytes()).unwrap(), ingest_reader(shuffled.as_bytes()).unwrap());
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let mut text = String::from("unit,time,y,x1\n");
        for u in [10, 9] {
            for t in [3, 1, 2, 11] {
                text.push_str(&format!("{u},{t},{},{}\n", u * 100 + t, t));
            }
        }
        let got = ingest_reader(text.as_bytes()).unwrap();
        assert_eq!(got.units, vec!["9", "10"]);
        assert_eq!(got.times, vec!["1", "2", "3", "11"]);
        assert_eq!(got.panel.y()[(0, 3)], 911.0);
    }

    #[test]
    fn missing_pair_is_named() {
        let text = format!("{TOY}a,4,7,0\n");
        let err = ingest_reader(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("(b, 4)"), "{err}");
    }

    #[test]
    fn parse_errors_name_the_row() {
        let text = "unit,time,y,x1\na,1,1.0,oops\n";
        let err = ingest_reader(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("oops"), "{err}");
        let err = ingest_reader("unit,period,y,x1\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("header"));
        let err = ingest_reader("unit,time,y,z\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("x1"));
        let dup = format!("{TOY}a,4,7,0\nb,4,8,0\na,1,1,1\n");
        assert!(ingest_reader(dup.as_bytes()).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn write_then_read_round_trip() {
        let text = format!("{TOY}a,4,7,0\nb,4,8,0\n");
        let got = ingest_reader(text.as_bytes()).unwrap();
        let bytes = write_panel(&got.panel, &got.units, &got.times).unwrap();
        assert_eq!(ingest_reader(bytes.as_slice()).unwrap(), got);
    }
}
