use std::path::{Path, PathBuf};

use mtlsum::data::write_jsonl;
use mtlsum::eval::{evaluate, EvalItem, EvalReport};
use mtlsum::{Error, Result};
use serde_json::Value;

use super::{create_dir, to_json, write_file};
use crate::config::config_error;

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub hypotheses: PathBuf,
    pub references: PathBuf,
    /// Enables the novel n-gram metrics.
    pub sources: Option<PathBuf>,
    /// Enables the saliency metric.
    pub keywords: Option<PathBuf>,
    /// Directory for `report.json`, `report.txt` and `scores.jsonl`.
    pub out: Option<PathBuf>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Lines are plain text, or JSON objects from which the first present
/// field of `fields` is taken.
fn read_column(path: &Path, fields: &[&str]) -> Result<Vec<Value>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            if !line.trim_start().starts_with('{') {
                return Ok(Value::String(line));
            }
            let v: Value = serde_json::from_str(&line).map_err(|source| Error::Json {
                context: format!("{}:{}", path.display(), i + 1),
                source,
            })?;
            Ok(fields.iter().find_map(|f| v.get(*f).cloned()).unwrap_or(Value::Null))
        })
        .collect()
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(text).collect::<Vec<_>>().join(" "),
        _ => String::new(),
    }
}

fn keyword_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Null => None,
        Value::Array(a) => Some(a.iter().map(text).collect()),
        other => Some(text(other).split_whitespace().map(str::to_string).collect()),
    }
}

fn aligned(name: &str, path: &Path, n: usize, expected: usize) -> Result<()> {
    if n == expected {
        Ok(())
    } else {
        Err(config_error(
            name,
            format!("{} has {n} lines but the hypotheses have {expected}", path.display()),
        ))
    }
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let hyps: Vec<String> = read_column(&args.hypotheses, &["hypothesis"])?.iter().map(text).collect();
    let refs: Vec<String> = read_column(&args.references, &["reference", "target"])?.iter().map(text).collect();
    aligned("references", &args.references, refs.len(), hyps.len())?;
    let sources = match &args.sources {
        Some(p) => {
            let s: Vec<String> = read_column(p, &["source"])?.iter().map(text).collect();
            aligned("sources", p, s.len(), hyps.len())?;
            Some(s)
        }
        None => None,
    };
    let keywords = match &args.keywords {
        Some(p) => {
            let k: Vec<Option<Vec<String>>> = read_column(p, &["keywords"])?.iter().map(keyword_list).collect();
            aligned("keywords", p, k.len(), hyps.len())?;
            Some(k)
        }
        None => None,
    };
    let items: Vec<EvalItem> = (0..hyps.len())
        .map(|i| EvalItem {
            hypothesis: &hyps[i],
            reference: &refs[i],
            source: sources.as_ref().map(|s| s[i].as_str()),
            keywords: keywords.as_ref().and_then(|k| k[i].as_deref()),
        })
        .collect();
    let report = evaluate(&items);
    if let Some(dir) = &args.out {
        write_report(dir, &report)?;
    }
    Ok(report)
}

pub(super) fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("report.txt"), &report.table())?;
    write_jsonl(&dir.join("scores.jsonl"), &report.examples)?;
    let mut summary = serde_json::to_value(report).expect("report serializes");
    if let Value::Object(m) = &mut summary {
        m.remove("examples");
    }
    write_file(&dir.join("report.json"), &to_json(&summary, "report")?)
}
