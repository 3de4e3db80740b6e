//! Tab-separated event and class files, and the combined metric report.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::pauroc::PaurocReport;
use crate::eval::psds::PsdsReport;
use crate::eval::retrieval::RetrievalReport;
use crate::eval::{Event, EventList, EventRole};

const EVENT_HEADER: &str = "clip_id\tonset\toffset\tclass_id";

/// Writes events as one header line plus clip, onset, offset, class rows.
pub fn write_events_tsv(path: &Path, list: &EventList) -> Result<()> {
    let mut out = String::from(EVENT_HEADER);
    out.push('\n');
    for e in &list.events {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.clip_id, e.onset, e.offset, e.class_id);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads an event file written by `write_events_tsv` (or compatible),
/// assigning the caller's role. The header line is optional.
pub fn read_events_tsv(path: &Path, role: EventRole) -> Result<EventList> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == EVENT_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                record: i + 1,
                message: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                record: i + 1,
                message: format!("bad {name} value {s:?}"),
            })
        };
        events.push(Event {
            clip_id: fields[0].to_string(),
            onset: parse(fields[1], "onset")?,
            offset: parse(fields[2], "offset")?,
            class_id: fields[3].to_string(),
        });
    }
    EventList::new(events, role)
}

/// Writes class ids with their text queries, one `id<TAB>query` per line.
/// An empty query falls back to the id itself on read.
pub fn write_query_list(path: &Path, queries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (id, query) in queries {
        if id.is_empty() || id.contains(['\t', '\n']) || query.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("bad class entry {id:?} / {query:?}")));
        }
        let _ = writeln!(out, "{id}\t{query}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads `id<TAB>query` lines; a line with no tab means the id doubles as
/// its own query text.
pub fn read_query_list(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let queries: Vec<(String, String)> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(|l| match l.split_once('\t') {
            Some((id, q)) if !q.trim().is_empty() => (id.to_string(), q.trim().to_string()),
            Some((id, _)) => (id.to_string(), id.to_string()),
            None => (l.to_string(), l.to_string()),
        })
        .collect();
    if queries.is_empty() {
        return Err(Error::invalid(format!("no classes in {}", path.display())));
    }
    Ok(queries)
}

/// Class ids only, from a one- or two-column class file.
pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_query_list(path)?.into_iter().map(|(id, _)| id).collect())
}

/// Everything one evaluation run produced. Sections are optional so the
/// same report type serves detection-only and retrieval-only runs.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pauroc: Option<PaurocReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psds: Option<PsdsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalReport>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serialize")
    }

    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.pauroc {
            let _ = writeln!(out, "pauroc macro        {:.4}", p.macro_average);
            for c in &p.per_class {
                let _ = writeln!(out, "  {:<18}{:.4}", c.class_id, c.value);
            }
            for s in &p.skipped {
                let _ = writeln!(out, "  {s:<18}skipped");
            }
        }
        if let Some(p) = &self.psds {
            let _ = writeln!(out, "psds                {:.4}", p.value);
            for c in &p.per_class {
                let _ = writeln!(out, "  {:<18}{:.4}", c.class_id, c.auc);
            }
            for s in &p.skipped {
                let _ = writeln!(out, "  {s:<18}skipped");
            }
        }
        if let Some(r) = &self.retrieval {
            let _ = writeln!(out, "retrieval map@10    {:.4}", r.map10);
            let _ = writeln!(out, "recall@1            {:.4}", r.r_at_1);
            let _ = writeln!(out, "recall@5            {:.4}", r.r_at_5);
            let _ = writeln!(out, "recall@10           {:.4}", r.r_at_10);
        }
        if out.is_empty() {
            out.push_str("no metrics computed\n");
        }
        out
    }
}
