use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Select,
    Improve,
    Evaluate,
    Solicit,
    Deposit,
    Adjust,
    AgentError,
    EmbedderDegraded,
    EarlyStop,
    Finish,
}

/// One transcript line. `ts` is a logical sequence number, so identical runs
/// produce byte-identical transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub ts: u64,
    pub phase: Phase,
    pub round: usize,
    pub agent: Option<usize>,
    pub payload_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn write_transcript<W: Write>(events: &[TranscriptEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn transcript_to_jsonl(events: &[TranscriptEvent]) -> String {
    let mut buf = Vec::new();
    write_transcript(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_transcript<R: BufRead>(input: R) -> Result<Vec<TranscriptEvent>, String> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(events)
}

/// First line (1-based) where two JSONL transcripts differ, if any.
pub fn first_divergence(expected: &str, actual: &str) -> Option<usize> {
    let mut a = expected.lines();
    let mut b = actual.lines();
    let mut line = 1;
    loop {
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(line),
            _ => line += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let events = vec![
            TranscriptEvent { ts: 0, phase: Phase::Improve, round: 0, agent: Some(1), payload_digest: digest(&[b"x"]), note: None },
            TranscriptEvent { ts: 1, phase: Phase::Select, round: 1, agent: None, payload_digest: digest(&[b"y"]), note: Some("n".into()) },
        ];
        let text = transcript_to_jsonl(&events);
        assert!(text.starts_with(r#"{"ts":0,"phase":"improve","round":0,"agent":1,"payload_digest":""#));
        assert_eq!(read_transcript(text.as_bytes()).unwrap(), events);
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest(&[b"ab", b"c"]), digest(&[b"a", b"bc"]));
        assert_eq!(digest(&[b""]).len(), 64);
    }

    #[test]
    fn divergence_pointer() {
        assert_eq!(first_divergence("a\nb\n", "a\nb\n"), None);
        assert_eq!(first_divergence("a\nb\n", "a\nc\n"), Some(2));
        assert_eq!(first_divergence("a\n", "a\nb\n"), Some(2));
    }
}
