use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Catalog, Interaction, ItemMeta, SplitDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionFormat {
    Tsv,
    Jsonl,
}

impl InteractionFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => InteractionFormat::Jsonl,
            _ => InteractionFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    /// 1-based line numbers that failed to parse.
    pub malformed: Vec<usize>,
}

/// Malformed lines are skipped with a warning unless they exceed 1% of the
/// non-empty lines; a single bad line is always tolerated.
fn check_malformed(path: &Path, total: usize, malformed: &[usize]) -> Result<()> {
    if malformed.is_empty() {
        return Ok(());
    }
    let allowed = ((total as f64) * 0.01).floor().max(1.0) as usize;
    if malformed.len() > allowed {
        let shown: Vec<String> = malformed.iter().take(20).map(|n| n.to_string()).collect();
        return Err(Error::Data(format!(
            "{}: {} of {} lines malformed (lines {}{})",
            path.display(),
            malformed.len(),
            total,
            shown.join(", "),
            if malformed.len() > 20 { ", ..." } else { "" }
        )));
    }
    log::warn!(
        "{}: skipped {} malformed line(s): {:?}",
        path.display(),
        malformed.len(),
        malformed
    );
    Ok(())
}

fn parse_tsv_line(line: &str) -> std::result::Result<Interaction, String> {
    let fields: Vec<&str> = if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    };
    if fields.len() < 3 {
        return Err(format!(
            "expected at least 3 fields, found {}",
            fields.len()
        ));
    }
    let timestamp = fields[2]
        .parse::<i64>()
        .map_err(|e| format!("timestamp `{}`: {e}", fields[2]))?;
    let rating = match fields.get(3).filter(|s| !s.is_empty()) {
        Some(r) => Some(r.parse::<f64>().map_err(|e| format!("rating `{r}`: {e}"))?),
        None => None,
    };
    let x = Interaction {
        user_id: fields[0].to_string(),
        item_id: fields[1].to_string(),
        timestamp,
        rating,
    };
    x.validate()?;
    Ok(x)
}

fn json_id(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_jsonl_line(line: &str) -> std::result::Result<Interaction, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let user_id = json_id(v.get("user")).ok_or("missing user")?;
    let item_id = json_id(v.get("item")).ok_or("missing item")?;
    let timestamp = v
        .get("ts")
        .and_then(Value::as_i64)
        .ok_or("missing integer ts")?;
    let rating = match v.get("rating") {
        None | Some(Value::Null) => None,
        Some(r) => Some(r.as_f64().ok_or("non-numeric rating")?),
    };
    let x = Interaction {
        user_id,
        item_id,
        timestamp,
        rating,
    };
    x.validate()?;
    Ok(x)
}

pub fn load_interactions(
    path: &Path,
    format: InteractionFormat,
) -> Result<(Vec<Interaction>, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut report = LoadReport::default();
    let mut total = 0usize;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        total += 1;
        let parsed = match format {
            InteractionFormat::Tsv => parse_tsv_line(trimmed),
            InteractionFormat::Jsonl => parse_jsonl_line(trimmed),
        };
        match parsed {
            Ok(x) => out.push(x),
            Err(reason) => {
                log::debug!("{}:{}: {reason}", path.display(), n + 1);
                report.malformed.push(n + 1);
            }
        }
    }
    if total == 0 {
        log::warn!("{}: no interactions found", path.display());
    }
    check_malformed(path, total, &report.malformed)?;
    report.records = out.len();
    Ok((out, report))
}

pub fn load_item_meta(path: &Path) -> Result<Vec<ItemMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<ItemMeta> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut malformed = Vec::new();
    let mut total = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<ItemMeta>(&line) {
            Ok(m) if !m.item_id.is_empty() && !(m.title.is_empty() && m.categories.is_empty()) => {
                if !seen.insert(m.item_id.clone()) {
                    return Err(Error::Data(format!(
                        "{}:{}: duplicate item `{}`",
                        path.display(),
                        n + 1,
                        m.item_id
                    )));
                }
                out.push(m);
            }
            _ => malformed.push(n + 1),
        }
    }
    check_malformed(path, total, &malformed)?;
    Ok(out)
}

pub fn write_interactions_tsv(path: &Path, xs: &[Interaction]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for x in xs {
        let res = match x.rating {
            Some(r) => writeln!(w, "{}\t{}\t{}\t{}", x.user_id, x.item_id, x.timestamp, r),
            None => writeln!(w, "{}\t{}\t{}", x.user_id, x.item_id, x.timestamp),
        };
        res.map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_item_meta(path: &Path, metas: &[ItemMeta]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in metas {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split_time: i64,
    pub train_fraction: f64,
    pub train: usize,
    pub test: usize,
    pub users: usize,
    pub items: usize,
    pub warm_items: usize,
    pub cold_items: usize,
}

impl SplitSummary {
    pub fn of(split: &SplitDataset) -> Self {
        SplitSummary {
            split_time: split.split_time,
            train_fraction: split.train_fraction,
            train: split.train.len(),
            test: split.test.len(),
            users: split.users.len(),
            items: split.catalog.len(),
            warm_items: split.catalog.warm_ids.len(),
            cold_items: split.catalog.cold_ids.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CatalogLine {
    item: String,
    index: usize,
    cold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
}

/// Writes `train.tsv`, `test.tsv`, `catalog.jsonl` and `split.json`.
pub fn save_split(dir: &Path, split: &SplitDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_interactions_tsv(&dir.join("train.tsv"), &split.train)?;
    write_interactions_tsv(&dir.join("test.tsv"), &split.test)?;

    let path = dir.join("catalog.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for id in split.catalog.ids() {
        let meta = split.catalog.meta_of(id);
        let line = CatalogLine {
            item: id.clone(),
            index: split.catalog.items[id],
            cold: split.catalog.is_cold_id(id),
            title: meta.map(|m| m.title.clone()),
            categories: meta.map(|m| m.categories.clone()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("split.json");
    let summary = serde_json::to_string_pretty(&SplitSummary::of(split))?;
    fs::write(&path, summary + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_split(dir: &Path) -> Result<SplitDataset> {
    let (train, _) = load_interactions(&dir.join("train.tsv"), InteractionFormat::Tsv)?;
    let (test, _) = load_interactions(&dir.join("test.tsv"), InteractionFormat::Tsv)?;
    let path = dir.join("split.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: SplitSummary = serde_json::from_str(&text)?;

    let path = dir.join("catalog.jsonl");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut warm = std::collections::BTreeSet::new();
    let mut cold = std::collections::BTreeSet::new();
    let mut metas = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CatalogLine = serde_json::from_str(&line)?;
        if c.title.is_some() || c.categories.is_some() {
            metas.push(ItemMeta {
                item_id: c.item.clone(),
                title: c.title.unwrap_or_default(),
                categories: c.categories.unwrap_or_default(),
            });
        }
        if c.cold {
            cold.insert(c.item);
        } else {
            warm.insert(c.item);
        }
    }
    let mut catalog = Catalog::new(warm, cold);
    catalog.attach_meta(metas);

    let users = train
        .iter()
        .chain(&test)
        .map(|x| x.user_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, u)| (u, i))
        .collect();
    let split = SplitDataset {
        train,
        test,
        split_time: summary.split_time,
        train_fraction: summary.train_fraction,
        catalog: catalog.restore(),
        users,
    };
    if SplitSummary::of(&split) != summary {
        return Err(Error::Data(format!(
            "{}: split summary does not match artifact contents",
            dir.display()
        )));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn tsv_parses_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "x.tsv",
            "u1\ti1\t100\nu1\ti2\t200\nu2\ti1\t150\n",
        );
        let (xs, report) = load_interactions(&p, InteractionFormat::Tsv).unwrap();
        assert_eq!(xs.len(), 3);
        assert_eq!(xs[2], Interaction::new("u2", "i1", 150));
        assert!(report.malformed.is_empty());
    }

    #[test]
    fn empty_file_yields_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.tsv", "");
        let (xs, _) = load_interactions(&p, InteractionFormat::Tsv).unwrap();
        assert!(xs.is_empty());
    }

    #[test]
    fn one_missing_timestamp_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for k in 0..10 {
            body += &format!("u{k}\ti{k}\t{}\t4\n", 100 + k);
            if k == 4 {
                body += "u9\ti9\n";
            }
        }
        let expected_lines = body.lines().count();
        let p = write(dir.path(), "x.tsv", &body);
        let (xs, report) = load_interactions(&p, InteractionFormat::Tsv).unwrap();
        assert_eq!(xs.len() + report.malformed.len(), expected_lines);
        assert_eq!(xs.len(), 10);
        assert_eq!(report.malformed, vec![6]);
    }

    #[test]
    fn many_malformed_lines_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.tsv", "u\ti\t1\nbad\nworse\nu\ti\t2\n");
        let err = load_interactions(&p, InteractionFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("lines 2, 3"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err =
            load_interactions(Path::new("/nonexistent/x.tsv"), InteractionFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn jsonl_accepts_numeric_ids_and_ratings() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "x.jsonl",
            "{\"user\":\"a\",\"item\":7,\"ts\":3,\"rating\":5}\n{\"user\":\"b\",\"item\":\"q\",\"ts\":4}\n",
        );
        let (xs, _) = load_interactions(&p, InteractionFormat::Jsonl).unwrap();
        assert_eq!(xs[0].item_id, "7");
        assert_eq!(xs[0].rating, Some(5.0));
        assert_eq!(xs[1].rating, None);
    }

    #[test]
    fn split_artifact_round_trips() {
        let xs: Vec<_> = (0..40)
            .map(|k| Interaction::new(format!("u{}", k % 7), format!("i{}", k % 11), k))
            .collect();
        let mut split = super::super::temporal_split(&xs, 0.7).unwrap();
        split.catalog.attach_meta(vec![ItemMeta {
            item_id: "i3".into(),
            title: "Lip balm".into(),
            categories: vec!["Beauty".into()],
        }]);
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &split).unwrap();
        let back = load_split(dir.path()).unwrap();
        assert_eq!(back, split);

        let again = tempfile::tempdir().unwrap();
        save_split(again.path(), &back).unwrap();
        for f in ["train.tsv", "test.tsv", "catalog.jsonl", "split.json"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(again.path().join(f)).unwrap()
            );
        }
    }
}
