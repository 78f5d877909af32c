use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatClient, ChatRequest, ChatResponse, LlmError};

/// One line of a replay transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub digest: String,
    /// Kept for human review; ignored when loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    pub response: ChatResponse,
}

impl ReplayEntry {
    pub fn new(request: &ChatRequest, response: ChatResponse) -> Self {
        Self {
            digest: request.digest(),
            request: Some(request.clone()),
            response,
        }
    }
}

struct Recorded {
    responses: Vec<ChatResponse>,
    cursor: usize,
}

/// Serves recorded responses by request digest.
///
/// Several entries may share a digest; they are returned in file order and
/// the last one repeats once the list is exhausted. An unknown digest is a
/// [`LlmError::ReplayMiss`].
pub struct ReplayClient {
    recorded: Mutex<HashMap<String, Recorded>>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut map: HashMap<String, Recorded> = HashMap::new();
        for e in entries {
            map.entry(e.digest)
                .or_insert_with(|| Recorded {
                    responses: Vec::new(),
                    cursor: 0,
                })
                .responses
                .push(e.response);
        }
        Self {
            recorded: Mutex::new(map),
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| LlmError::ReplayFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Self::from_reader(File::open(path)?)
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let digest = request.digest();
        let mut map = self.recorded.lock().unwrap();
        let rec = map.get_mut(&digest).ok_or(LlmError::ReplayMiss { digest })?;
        let idx = rec.cursor.min(rec.responses.len() - 1);
        rec.cursor += 1;
        Ok(rec.responses[idx].clone())
    }
}

/// Forwards to an inner client and appends every exchange to a transcript
/// that [`ReplayClient`] can load.
pub struct RecordingClient<C> {
    inner: C,
    sink: Mutex<File>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, transcript: &Path) -> Result<Self, LlmError> {
        let sink = OpenOptions::new().create(true).append(true).open(transcript)?;
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let line = serde_json::to_string(&ReplayEntry::new(request, response.clone()))
            .expect("replay entry serializes");
        let mut sink = self.sink.lock().unwrap();
        writeln!(sink, "{line}")?;
        Ok(response)
    }
}
