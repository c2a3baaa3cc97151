use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("reply contains no closed fenced code block")]
    NoCodeBlock,
}

const FENCE: &str = "```";

/// Returns the body of the first fenced block whose info string equals
/// `fence_tag` (ASCII case-insensitive), falling back to the first closed
/// block of any tag. A block is closed by a line holding only the fence; an
/// unterminated block is ignored.
pub fn extract_code_block(reply: &str, fence_tag: &str) -> Result<String, ExtractError> {
    let mut blocks: Vec<(&str, Vec<&str>)> = Vec::new();
    let mut open: Option<(&str, Vec<&str>)> = None;
    for line in reply.lines() {
        let trimmed = line.trim();
        match open.as_mut() {
            None => {
                if let Some(tag) = trimmed.strip_prefix(FENCE) {
                    open = Some((tag.trim(), Vec::new()));
                }
            }
            Some((_, body)) => {
                if trimmed == FENCE {
                    blocks.push(open.take().expect("open block"));
                } else {
                    body.push(line);
                }
            }
        }
    }
    let chosen = blocks
        .iter()
        .find(|(tag, _)| tag.eq_ignore_ascii_case(fence_tag))
        .or_else(|| blocks.first())
        .ok_or(ExtractError::NoCodeBlock)?;
    Ok(chosen.1.join("\n"))
}
