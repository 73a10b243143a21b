//! Shell-out to an external constituency parser.
//!
//! Contract: the command reads one sentence per line on stdin and writes one
//! bracketed tree per line on stdout, in the same order.

use std::io::Write;
use std::process::{Command, Stdio};

use super::tree::{parse_bracketed_tree, ConstituencyTree};
use super::LingError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalParser {
    program: String,
    args: Vec<String>,
}

impl ExternalParser {
    /// `command` is split on whitespace; no shell quoting is interpreted.
    pub fn new(command: &str) -> Result<Self, LingError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| LingError::Parser("empty parser command".into()))?;
        Ok(ExternalParser { program, args: parts.collect() })
    }

    pub fn parse_all(&self, sentences: &[String]) -> Result<Vec<ConstituencyTree>, LingError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| LingError::Parser(format!("cannot start {:?}: {e}", self.program)))?;
        let input: String = sentences.iter().map(|s| s.replace(['\n', '\r'], " ") + "\n").collect();
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let out = child.wait_with_output().map_err(|e| LingError::Parser(e.to_string()))?;
        writer.join().map_err(|_| LingError::Parser("stdin writer panicked".into()))?.map_err(|e| LingError::Parser(format!("writing to parser: {e}")))?;
        if !out.status.success() {
            return Err(LingError::Parser(format!("{:?} exited with {}: {}", self.program, out.status, String::from_utf8_lossy(&out.stderr).trim())));
        }
        let text = String::from_utf8(out.stdout).map_err(|e| LingError::Parser(format!("non-UTF-8 output: {e}")))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != sentences.len() {
            return Err(LingError::Parser(format!("sent {} sentences, got {} trees", sentences.len(), lines.len())));
        }
        lines.into_iter().map(parse_bracketed_tree).collect()
    }

    pub fn parse(&self, sentence: &str) -> Result<ConstituencyTree, LingError> {
        Ok(self.parse_all(&[sentence.to_string()])?.remove(0))
    }
}
