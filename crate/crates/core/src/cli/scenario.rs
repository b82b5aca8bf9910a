//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! [scenario]
//! name = two_labels
//! vocab_size = 2
//! data_dim = 1
//! gen_hidden = 16,16
//!
//! [label 0]
//! component = 1; mu = -1; var = 0.25
//! [label 1]
//! component = 0.5; mu = 1; var = 0.25
//! component = 0.5; mu = 2; var = 0.25
//!
//! [task 1]
//! iterations = 500
//! center = a; n = 200; labels = 0:100,1:100
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use crate::data::{CenterDataset, CondGaussianMixture, Component, LabelId};
use crate::error::{Error, Result};
use crate::federation::{HyperOverrides, Scenario, TaskSpec};
use crate::gan::{GanHyper, GenLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Scenario,
    Label(usize),
    Task(usize),
}

/// A `key = value` line with its source line number.
#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { line, msg: msg.into() }
}

fn semantic(key: &str, msg: impl Into<String>) -> Error {
    Error::Semantic {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_header(line: usize, text: &str) -> Result<Section> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| syntax(line, "unterminated section header"))?;
    let mut words = inner.split_whitespace();
    let kind = words.next().ok_or_else(|| syntax(line, "empty section header"))?;
    let arg = words.next();
    if words.next().is_some() {
        return Err(syntax(line, format!("too many words in section header `{text}`")));
    }
    let index = |what: &str| -> Result<usize> {
        arg.ok_or_else(|| syntax(line, format!("[{what}] needs an index")))?
            .parse()
            .map_err(|_| syntax(line, format!("bad {what} index `{}`", arg.unwrap_or_default())))
    };
    match kind {
        "scenario" if arg.is_none() => Ok(Section::Scenario),
        "scenario" => Err(syntax(line, "[scenario] takes no index")),
        "label" => Ok(Section::Label(index("label")?)),
        "task" => Ok(Section::Task(index("task")?)),
        other => Err(syntax(line, format!("unknown section `{other}`"))),
    }
}

fn split_kv(line: usize, text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| syntax(line, format!("expected `key = value`, got `{text}`")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || k.contains(char::is_whitespace) {
        return Err(syntax(line, format!("bad key `{k}`")));
    }
    if v.is_empty() {
        return Err(syntax(line, format!("missing value for `{k}`")));
    }
    Ok((k.to_string(), v.to_string()))
}

/// Splits the text into sections in file order.
fn tokenize(text: &str) -> Result<Vec<(Section, Vec<Entry>)>> {
    let mut out: Vec<(Section, Vec<Entry>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        if stripped.starts_with('[') {
            out.push((parse_header(line, stripped)?, Vec::new()));
            continue;
        }
        let (key, value) = split_kv(line, stripped)?;
        match out.last_mut() {
            Some((_, entries)) => entries.push(Entry { line, key, value }),
            None => return Err(syntax(line, "key outside of any section")),
        }
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| semantic(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(semantic(key, format!("expected true or false, got `{value}`"))),
    }
}

/// `a = 1; b = 2` → ordered pairs. The first pair names the record.
fn parse_record(line: usize, value: &str, head: &str) -> Result<Vec<(String, String)>> {
    let mut out = vec![(head.to_string(), String::new())];
    let mut parts = value.split(';');
    out[0].1 = parts.next().unwrap_or("").trim().to_string();
    for p in parts {
        let p = p.trim();
        if p.is_empty() {
            continue;
        }
        out.push(split_kv(line, p)?);
    }
    Ok(out)
}

fn take_fields(
    record: Vec<(String, String)>,
    allowed: &[&str],
) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, v) in record {
        if !allowed.contains(&k.as_str()) {
            return Err(semantic(&k, "unknown field"));
        }
        if map.insert(k.clone(), v).is_some() {
            return Err(semantic(&k, "given twice"));
        }
    }
    for a in allowed {
        if !map.contains_key(*a) {
            return Err(semantic(a, "missing"));
        }
    }
    Ok(map)
}

struct Header {
    name: Option<String>,
    vocab_size: usize,
    data_dim: usize,
    seed: u64,
    hyper: GanHyper,
}

fn parse_gen_loss(key: &str, value: &str) -> Result<GenLoss> {
    match value {
        "minimax" => Ok(GenLoss::Minimax),
        "non_saturating" => Ok(GenLoss::NonSaturating),
        _ => Err(semantic(key, format!("expected minimax or non_saturating, got `{value}`"))),
    }
}

fn parse_header_section(entries: &[Entry]) -> Result<Header> {
    let mut seen = BTreeSet::new();
    let mut h = Header {
        name: None,
        vocab_size: 0,
        data_dim: 0,
        seed: 0,
        hyper: GanHyper::default(),
    };
    for e in entries {
        if !seen.insert(e.key.as_str()) {
            return Err(semantic(&e.key, "given twice"));
        }
        let (k, v) = (e.key.as_str(), e.value.as_str());
        match k {
            "name" => h.name = Some(v.to_string()),
            "vocab_size" => h.vocab_size = parse_num(k, v)?,
            "data_dim" => h.data_dim = parse_num(k, v)?,
            "seed" => h.seed = parse_num(k, v)?,
            "noise_dim" => h.hyper.noise_dim = parse_num(k, v)?,
            "lambda" => h.hyper.lambda = parse_num(k, v)?,
            "lr" => {
                let lr = parse_num(k, v)?;
                h.hyper.gen_adam.lr = lr;
                h.hyper.disc_adam.lr = lr;
            }
            "gen_lr" => h.hyper.gen_adam.lr = parse_num(k, v)?,
            "disc_lr" => h.hyper.disc_adam.lr = parse_num(k, v)?,
            "beta1" => {
                let b = parse_num(k, v)?;
                h.hyper.gen_adam.beta1 = b;
                h.hyper.disc_adam.beta1 = b;
            }
            "beta2" => {
                let b = parse_num(k, v)?;
                h.hyper.gen_adam.beta2 = b;
                h.hyper.disc_adam.beta2 = b;
            }
            "m" => h.hyper.m = parse_num(k, v)?,
            "n" => h.hyper.n = parse_num(k, v)?,
            "d_iters" => h.hyper.d_iters = parse_num(k, v)?,
            "gen_hidden" => h.hyper.gen_hidden = parse_list(k, v)?,
            "disc_hidden" => h.hyper.disc_hidden = parse_list(k, v)?,
            "gen_loss" => h.hyper.gen_loss = parse_gen_loss(k, v)?,
            "lr_decay" => h.hyper.lr_decay = parse_bool(k, v)?,
            _ => return Err(semantic(k, "unknown key in [scenario]")),
        }
    }
    for required in ["vocab_size", "data_dim"] {
        if !seen.contains(required) {
            return Err(semantic(required, "missing from [scenario]"));
        }
    }
    if h.vocab_size == 0 {
        return Err(semantic("vocab_size", "must be positive"));
    }
    if h.data_dim == 0 {
        return Err(semantic("data_dim", "must be positive"));
    }
    h.hyper.validate().map_err(|e| semantic(hyper_key(&e), e.to_string()))?;
    Ok(h)
}

/// Best-effort key attribution for hyperparameter validation failures.
fn hyper_key(e: &Error) -> &'static str {
    let msg = e.to_string();
    if msg.contains("lambda") {
        "lambda"
    } else if msg.contains("hidden") {
        "gen_hidden/disc_hidden"
    } else if msg.contains("lr") || msg.contains("learning") {
        "lr"
    } else if msg.contains("beta") {
        "beta1/beta2"
    } else {
        "m/n/d_iters/noise_dim"
    }
}

fn parse_label_section(entries: &[Entry], dim: usize, y: usize) -> Result<Vec<Component>> {
    let mut comps = Vec::new();
    for e in entries {
        if e.key != "component" {
            return Err(semantic(&e.key, format!("unknown key in [label {y}]")));
        }
        let f = take_fields(parse_record(e.line, &e.value, "component")?, &["component", "mu", "var"])?;
        let weight: f64 = parse_num("component", &f["component"])?;
        let mean: Vec<f64> = parse_list("mu", &f["mu"])?;
        let var: Vec<f64> = parse_list("var", &f["var"])?;
        if mean.len() != dim {
            return Err(semantic("mu", format!("label {y}: expected {dim} entries, got {}", mean.len())));
        }
        if var.len() != dim {
            return Err(semantic("var", format!("label {y}: expected {dim} entries, got {}", var.len())));
        }
        comps.push(Component::new(weight, mean, var));
    }
    if comps.is_empty() {
        return Err(semantic("component", format!("label {y} has no components")));
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(semantic("component", format!("label {y}: weights must sum to 1 (got {total})")));
    }
    Ok(comps)
}

struct RawCenter {
    name: String,
    size: u64,
    counts: BTreeMap<LabelId, u64>,
}

struct RawTask {
    iterations: usize,
    overrides: HyperOverrides,
    centers: Vec<RawCenter>,
}

fn parse_counts(value: &str, vocab: usize) -> Result<BTreeMap<LabelId, u64>> {
    let mut counts = BTreeMap::new();
    for pair in value.split(',') {
        let (y, c) = pair
            .split_once(':')
            .ok_or_else(|| semantic("labels", format!("expected `<id>:<count>`, got `{}`", pair.trim())))?;
        let y: usize = parse_num("labels", y)?;
        let c: u64 = parse_num("labels", c)?;
        if y >= vocab {
            return Err(semantic("labels", format!("label {y} is outside the vocabulary of {vocab}")));
        }
        if counts.insert(LabelId(y), c).is_some() {
            return Err(semantic("labels", format!("label {y} listed twice")));
        }
    }
    Ok(counts)
}

fn parse_task_section(entries: &[Entry], vocab: usize, t: usize) -> Result<RawTask> {
    let mut iterations = None;
    let mut overrides = HyperOverrides::default();
    let mut centers = Vec::new();
    let mut seen = BTreeSet::new();
    for e in entries {
        let (k, v) = (e.key.as_str(), e.value.as_str());
        if k != "center" && !seen.insert(k) {
            return Err(semantic(k, "given twice"));
        }
        match k {
            "iterations" => iterations = Some(parse_num(k, v)?),
            "lambda" => overrides.lambda = Some(parse_num(k, v)?),
            "lr" => overrides.lr = Some(parse_num(k, v)?),
            "m" => overrides.m = Some(parse_num(k, v)?),
            "n" => overrides.n = Some(parse_num(k, v)?),
            "d_iters" => overrides.d_iters = Some(parse_num(k, v)?),
            "center" => {
                let f = take_fields(parse_record(e.line, v, "center")?, &["center", "n", "labels"])?;
                let size: u64 = parse_num("n", &f["n"])?;
                let counts = parse_counts(&f["labels"], vocab)?;
                let total: u64 = counts.values().sum();
                if size == 0 {
                    return Err(semantic("n", format!("center {} must hold data", f["center"])));
                }
                if total != size {
                    return Err(semantic(
                        "n",
                        format!("center {} has n = {size} but its label counts sum to {total}", f["center"]),
                    ));
                }
                centers.push(RawCenter {
                    name: f["center"].clone(),
                    size,
                    counts,
                });
            }
            _ => return Err(semantic(k, format!("unknown key in [task {t}]"))),
        }
    }
    let iterations = iterations.ok_or_else(|| semantic("iterations", format!("missing from [task {t}]")))?;
    if centers.is_empty() {
        return Err(semantic("center", format!("task {t} has no centers")));
    }
    Ok(RawTask {
        iterations,
        overrides,
        centers,
    })
}

/// Parses and fully validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sections = tokenize(text)?;
    let mut header = None;
    let mut labels: BTreeMap<usize, &[Entry]> = BTreeMap::new();
    let mut tasks: BTreeMap<usize, &[Entry]> = BTreeMap::new();
    for (section, entries) in &sections {
        let dup = match *section {
            Section::Scenario => header.replace(entries.as_slice()).is_some(),
            Section::Label(y) => labels.insert(y, entries).is_some(),
            Section::Task(t) => tasks.insert(t, entries).is_some(),
        };
        if dup {
            return Err(semantic("section", format!("{section:?} appears twice")));
        }
    }
    let header = parse_header_section(header.ok_or_else(|| semantic("scenario", "missing [scenario] section"))?)?;

    let mut comps = Vec::with_capacity(header.vocab_size);
    for y in 0..header.vocab_size {
        let entries = labels
            .remove(&y)
            .ok_or_else(|| semantic("label", format!("no [label {y}] section")))?;
        comps.push(parse_label_section(entries, header.data_dim, y)?);
    }
    if let Some((&y, _)) = labels.iter().next() {
        return Err(semantic("label", format!("[label {y}] is outside the vocabulary of {}", header.vocab_size)));
    }
    let truth = Arc::new(CondGaussianMixture::new(header.data_dim, comps).map_err(|e| semantic("component", e.to_string()))?);

    if tasks.is_empty() {
        return Err(semantic("task", "scenario has no tasks"));
    }
    let mut specs = Vec::with_capacity(tasks.len());
    for (i, (&t, entries)) in tasks.iter().enumerate() {
        if t != i + 1 {
            return Err(semantic("task", format!("tasks must be numbered 1, 2, ...; found [task {t}]")));
        }
        let raw = parse_task_section(entries, header.vocab_size, t)?;
        let centers = raw
            .centers
            .into_iter()
            .map(|c| {
                let ds = CenterDataset::new(c.name.clone(), c.counts, truth.clone()).map_err(|e| semantic("center", e.to_string()))?;
                debug_assert_eq!(ds.size(), c.size);
                Ok(ds)
            })
            .collect::<Result<Vec<_>>>()?;
        specs.push(TaskSpec {
            centers,
            iterations: raw.iterations,
            overrides: raw.overrides,
        });
    }
    let s = Scenario {
        name: header.name,
        truth,
        tasks: specs,
        hyper: header.hyper,
        seed: header.seed,
    };
    s.validate().map_err(|e| semantic("task", e.to_string()))?;
    Ok(s)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Writes a scenario back out; `parse_scenario` reads it back unchanged.
pub fn serialize_scenario(s: &Scenario) -> String {
    let h = &s.hyper;
    let mut out = String::from("[scenario]\n");
    if let Some(name) = &s.name {
        let _ = writeln!(out, "name = {name}");
    }
    let _ = writeln!(out, "vocab_size = {}", s.vocab_size());
    let _ = writeln!(out, "data_dim = {}", s.data_dim());
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(out, "noise_dim = {}", h.noise_dim);
    let _ = writeln!(out, "lambda = {}", h.lambda);
    let _ = writeln!(out, "gen_lr = {}", h.gen_adam.lr);
    let _ = writeln!(out, "disc_lr = {}", h.disc_adam.lr);
    if h.gen_adam.beta1 == h.disc_adam.beta1 && h.gen_adam.beta2 == h.disc_adam.beta2 {
        let _ = writeln!(out, "beta1 = {}", h.gen_adam.beta1);
        let _ = writeln!(out, "beta2 = {}", h.gen_adam.beta2);
    }
    let _ = writeln!(out, "m = {}", h.m);
    let _ = writeln!(out, "n = {}", h.n);
    let _ = writeln!(out, "d_iters = {}", h.d_iters);
    let _ = writeln!(out, "gen_hidden = {}", join(&h.gen_hidden));
    let _ = writeln!(out, "disc_hidden = {}", join(&h.disc_hidden));
    let loss = match h.gen_loss {
        GenLoss::Minimax => "minimax",
        GenLoss::NonSaturating => "non_saturating",
    };
    let _ = writeln!(out, "gen_loss = {loss}");
    let _ = writeln!(out, "lr_decay = {}", h.lr_decay);
    for y in 0..s.vocab_size() {
        let _ = writeln!(out, "\n[label {y}]");
        for c in s.truth.components(LabelId(y)).expect("label in range") {
            let _ = writeln!(out, "component = {}; mu = {}; var = {}", c.weight, join(&c.mean), join(&c.var));
        }
    }
    for (i, t) in s.tasks.iter().enumerate() {
        let _ = writeln!(out, "\n[task {}]", i + 1);
        let _ = writeln!(out, "iterations = {}", t.iterations);
        let o = &t.overrides;
        if let Some(v) = o.lambda {
            let _ = writeln!(out, "lambda = {v}");
        }
        if let Some(v) = o.lr {
            let _ = writeln!(out, "lr = {v}");
        }
        if let Some(v) = o.m {
            let _ = writeln!(out, "m = {v}");
        }
        if let Some(v) = o.n {
            let _ = writeln!(out, "n = {v}");
        }
        if let Some(v) = o.d_iters {
            let _ = writeln!(out, "d_iters = {v}");
        }
        for c in &t.centers {
            let counts: Vec<String> = c.label_counts().iter().map(|(y, n)| format!("{}:{n}", y.0)).collect();
            let _ = writeln!(out, "center = {}; n = {}; labels = {}", c.id(), c.size(), counts.join(","));
        }
    }
    out
}
