use std::time::{Duration, UNIX_EPOCH};

use biotrak_api::views::{EntryView, HistoryView};

pub fn render_entry(e: &EntryView) -> String {
    let mut line = format!("{:indent$}{} {}", "", e.process_type, e.lot, indent = 2 * e.depth);
    if e.external {
        line.push_str(" (external)");
    }
    match &e.actor_name {
        Some(name) => line.push_str(&format!(" by {name} [{}]", e.actor_id)),
        None => line.push_str(&format!(" by {}", e.actor_id)),
    }
    let at = humantime::format_rfc3339_seconds(UNIX_EPOCH + Duration::from_secs(e.created_at));
    line.push_str(&format!(" at {at}"));
    match e.compliant {
        Some(true) => line.push_str(" [compliant]"),
        Some(false) => line.push_str(" [NON-COMPLIANT]"),
        None => {}
    }
    line
}

pub fn render(h: &HistoryView) -> String {
    h.entries.iter().map(|e| render_entry(e) + "\n").collect()
}
