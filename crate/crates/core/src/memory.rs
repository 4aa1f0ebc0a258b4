//! File-backed memory: one JSON file per profile plus an append-only
//! JSON-lines log of recommendations and feedback rounds.
//!
//! Layout under the store root:
//!
//! ```text
//! user/<owner>.json   profile fields and a version counter
//! user/<owner>.emb    embedding (u32 LE dim, then f32 LE values)
//! item/...            same for items
//! log.jsonl           {seq, ts, kind, payload} per line
//! quarantine/         records that failed to parse on open
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::profiles::{decode_embedding, encode_embedding, Profile, ProfileKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Recommendation,
    Feedback,
    WeightChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub ts: i64,
    pub kind: LogKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Default)]
pub struct LogFilter {
    pub kind: Option<LogKind>,
    pub min_seq: Option<u64>,
    /// Matches entries whose payload has `"user": <this>`.
    pub user: Option<String>,
}

impl LogFilter {
    fn accepts(&self, e: &LogEntry) -> bool {
        self.kind.is_none_or(|k| k == e.kind)
            && self.min_seq.is_none_or(|s| e.seq >= s)
            && self
                .user
                .as_ref()
                .is_none_or(|u| e.payload.get("user").and_then(Value::as_str) == Some(u.as_str()))
    }
}

/// What `open` had to set aside.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub profiles_loaded: usize,
    pub quarantined: Vec<PathBuf>,
    /// Log lines that could not be read, including a torn final line.
    pub lost_log_entries: usize,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    #[serde(flatten)]
    profile: Profile,
    version: u64,
}

struct Stored {
    profile: Profile,
    version: u64,
}

struct LogWriter {
    file: File,
    next_seq: u64,
}

pub struct MemoryStore {
    root: PathBuf,
    index: RwLock<BTreeMap<(ProfileKind, String), Stored>>,
    writer: Mutex<LogWriter>,
    report: OpenReport,
}

const KINDS: [ProfileKind; 2] = [ProfileKind::User, ProfileKind::Item];

/// Owner ids become file names; anything outside `[A-Za-z0-9_-]` is
/// percent-escaped.
fn file_stem(owner: &str) -> String {
    let mut out = String::with_capacity(owner.len());
    for b in owner.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl MemoryStore {
    /// Open or create a store. Unreadable profile files are moved to
    /// `quarantine/`; a torn or corrupt log line is cut out of the log and
    /// kept there too. Both are listed in [`MemoryStore::report`].
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let quarantine = root.join("quarantine");
        let mut report = OpenReport::default();
        let mut index = BTreeMap::new();

        for kind in KINDS {
            let dir = root.join(kind.as_str());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut names: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            names.sort();
            for path in names {
                match load_profile(&path) {
                    Ok((profile, version)) if profile.kind == kind => {
                        index.insert((kind, profile.owner_id.clone()), Stored { profile, version });
                        report.profiles_loaded += 1;
                    }
                    Ok(_) => {
                        report.quarantined.push(quarantine_file(&quarantine, &path)?);
                    }
                    Err(reason) => {
                        log::warn!("quarantining {}: {reason}", path.display());
                        report.quarantined.push(quarantine_file(&quarantine, &path)?);
                        let emb = path.with_extension("emb");
                        if emb.exists() {
                            report.quarantined.push(quarantine_file(&quarantine, &emb)?);
                        }
                    }
                }
            }
        }

        let log_path = root.join("log.jsonl");
        let (next_seq, lost) = repair_log(&log_path, &quarantine)?;
        report.lost_log_entries = lost;
        if lost > 0 {
            log::warn!("{lost} unreadable log record(s) moved to quarantine");
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;

        Ok(MemoryStore {
            root: root.to_path_buf(),
            index: RwLock::new(index),
            writer: Mutex::new(LogWriter { file, next_seq }),
            report,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn report(&self) -> &OpenReport {
        &self.report
    }

    fn profile_path(&self, kind: ProfileKind, owner: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{}.json", file_stem(owner)))
    }

    /// Store `profile`, replacing any previous version. Returns the new
    /// version number (1 for a first write).
    pub fn put_profile(&self, profile: &Profile) -> Result<u64> {
        let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
        let key = (profile.kind, profile.owner_id.clone());
        let version = index.get(&key).map_or(1, |s| s.version + 1);
        let path = self.profile_path(profile.kind, &profile.owner_id);
        write_atomic(&path.with_extension("emb"), &encode_embedding(&profile.embedding))?;
        let body = serde_json::to_vec_pretty(&ProfileFile {
            profile: profile.clone(),
            version,
        })?;
        write_atomic(&path, &body)?;
        index.insert(
            key,
            Stored {
                profile: profile.clone(),
                version,
            },
        );
        Ok(version)
    }

    pub fn get_profile(&self, kind: ProfileKind, owner: &str) -> Option<Profile> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index.get(&(kind, owner.to_string())).map(|s| s.profile.clone())
    }

    pub fn version(&self, kind: ProfileKind, owner: &str) -> Option<u64> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index.get(&(kind, owner.to_string())).map(|s| s.version)
    }

    pub fn profiles(&self, kind: ProfileKind) -> BTreeMap<String, Profile> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index
            .iter()
            .filter(|((k, _), _)| *k == kind)
            .map(|((_, owner), s)| (owner.clone(), s.profile.clone()))
            .collect()
    }

    pub fn profile_count(&self, kind: ProfileKind) -> usize {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index.keys().filter(|(k, _)| *k == kind).count()
    }

    /// Append one record and return its sequence number.
    pub fn append_log(&self, kind: LogKind, ts: i64, payload: Value) -> Result<u64> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.write_entry(&mut w, kind, ts, payload)
    }

    /// Append records back to back; no other writer can interleave.
    pub fn append_batch(&self, entries: impl IntoIterator<Item = (LogKind, i64, Value)>) -> Result<Vec<u64>> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        entries
            .into_iter()
            .map(|(kind, ts, payload)| self.write_entry(&mut w, kind, ts, payload))
            .collect()
    }

    fn write_entry(&self, w: &mut LogWriter, kind: LogKind, ts: i64, payload: Value) -> Result<u64> {
        let entry = LogEntry {
            seq: w.next_seq,
            ts,
            kind,
            payload,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let path = self.root.join("log.jsonl");
        w.file.write_all(&line).map_err(|e| Error::io(&path, e))?;
        w.file.flush().map_err(|e| Error::io(&path, e))?;
        w.next_seq += 1;
        Ok(entry.seq)
    }

    /// Entries in sequence order. A trailing line still being written is
    /// ignored rather than reported.
    pub fn read_log(&self, filter: &LogFilter) -> Result<Vec<LogEntry>> {
        let path = self.root.join("log.jsonl");
        let mut text = String::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(&path, e))?;
        let complete = match text.rfind('\n') {
            Some(p) => &text[..=p],
            None => "",
        };
        let mut out = Vec::new();
        for line in complete.lines().filter(|l| !l.trim().is_empty()) {
            let e: LogEntry = serde_json::from_str(line).map_err(|err| Error::Corrupt {
                path: path.clone(),
                reason: err.to_string(),
            })?;
            if filter.accepts(&e) {
                out.push(e);
            }
        }
        Ok(out)
    }
}

fn load_profile(path: &Path) -> std::result::Result<(Profile, u64), String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let file: ProfileFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let bytes = fs::read(path.with_extension("emb")).map_err(|e| format!("embedding: {e}"))?;
    let mut profile = file.profile;
    profile.embedding = decode_embedding(&bytes)?;
    Ok((profile, file.version))
}

fn quarantine_file(dir: &Path, path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parent = path
        .parent()
        .and_then(Path::file_name)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let dest = dir.join(format!("{parent}-{name}"));
    fs::rename(path, &dest).map_err(|e| Error::io(path, e))?;
    Ok(dest)
}

/// Keep the complete, parseable lines with increasing sequence numbers and
/// move everything else to `quarantine/log.rejected`. Returns the next
/// sequence number and how many lines were dropped.
fn repair_log(path: &Path, quarantine: &Path) -> Result<(u64, usize)> {
    let Ok(f) = File::open(path) else {
        return Ok((1, 0));
    };
    let mut reader = BufReader::new(f);
    let mut good = Vec::new();
    let mut bad: Vec<String> = Vec::new();
    let mut last_seq = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let torn = !buf.ends_with('\n');
        let line = buf.trim_end_matches('\n');
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(line) {
            Ok(e) if !torn && e.seq > last_seq => {
                last_seq = e.seq;
                good.push(line.to_string());
            }
            _ => bad.push(line.to_string()),
        }
    }
    if !bad.is_empty() {
        fs::create_dir_all(quarantine).map_err(|e| Error::io(quarantine, e))?;
        let rej = quarantine.join("log.rejected");
        let mut q = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&rej)
            .map_err(|e| Error::io(&rej, e))?;
        for l in &bad {
            writeln!(q, "{l}").map_err(|e| Error::io(&rej, e))?;
        }
        let mut body = good.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        write_atomic(path, body.as_bytes())?;
    }
    Ok((last_seq + 1, bad.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textvec::EmbeddingVector;
    use proptest::prelude::*;
    use serde_json::json;

    fn profile(owner: &str, kind: ProfileKind, emb: Vec<f32>) -> Profile {
        Profile {
            owner_id: owner.into(),
            kind,
            summaries: [("Scent".to_string(), "likes musk".to_string())].into(),
            embedding: EmbeddingVector::from(emb),
            built_at: 17,
        }
    }

    #[test]
    fn put_get_round_trip_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let store = MemoryStore::open(dir.path()).unwrap();
        let p = profile("A/1 x", ProfileKind::Item, vec![0.1, -3.5, f32::MIN_POSITIVE]);
        assert_eq!(store.put_profile(&p).unwrap(), 1);
        assert_eq!(store.get_profile(ProfileKind::Item, "A/1 x").unwrap(), p);
        assert!(store.get_profile(ProfileKind::User, "A/1 x").is_none());
        assert!(store.get_profile(ProfileKind::Item, "nobody").is_none());
        assert_eq!(store.put_profile(&p).unwrap(), 2);
        drop(store);

        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get_profile(ProfileKind::Item, "A/1 x").unwrap(), p);
        assert_eq!(reopened.version(ProfileKind::Item, "A/1 x"), Some(2));
        assert!(reopened.report().quarantined.is_empty());
    }

    #[test]
    fn thousand_appends_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = MemoryStore::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let store = &store;
                s.spawn(move || {
                    for i in 0..250 {
                        let kind = if i % 2 == 0 { LogKind::Recommendation } else { LogKind::Feedback };
                        store.append_log(kind, i, json!({"thread": t, "i": i})).unwrap();
                    }
                });
            }
        });
        let all = store.read_log(&LogFilter::default()).unwrap();
        assert_eq!(all.len(), 1000);
        let seqs: Vec<u64> = all.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=1000).collect::<Vec<_>>());
        let fb = store
            .read_log(&LogFilter {
                kind: Some(LogKind::Feedback),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(fb.len(), 500);
    }

    #[test]
    fn torn_last_record_is_lost_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = MemoryStore::open(dir.path()).unwrap();
            for i in 0..5 {
                store.append_log(LogKind::WeightChange, i, json!({"user": "u", "i": i})).unwrap();
            }
        }
        let log = dir.path().join("log.jsonl");
        let len = fs::metadata(&log).unwrap().len();
        let f = OpenOptions::new().write(true).open(&log).unwrap();
        f.set_len(len - 7).unwrap();
        drop(f);

        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.report().lost_log_entries, 1);
        let entries = store.read_log(&LogFilter::default()).unwrap();
        assert_eq!(entries.len(), 4);
        assert_eq!(store.append_log(LogKind::Feedback, 9, json!({})).unwrap(), 5);
        assert_eq!(store.read_log(&LogFilter::default()).unwrap().len(), 5);
        assert!(dir.path().join("quarantine/log.rejected").exists());
    }

    #[test]
    fn corrupt_profile_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = MemoryStore::open(dir.path()).unwrap();
            store.put_profile(&profile("good", ProfileKind::User, vec![1.0])).unwrap();
            store.put_profile(&profile("bad", ProfileKind::User, vec![1.0])).unwrap();
        }
        let emb = dir.path().join("user/bad.emb");
        let bytes = fs::read(&emb).unwrap();
        fs::write(&emb, &bytes[..bytes.len() - 2]).unwrap();

        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.report().quarantined.len(), 2);
        assert!(store.get_profile(ProfileKind::User, "good").is_some());
        assert!(store.get_profile(ProfileKind::User, "bad").is_none());
        assert!(!dir.path().join("user/bad.json").exists());
    }

    #[test]
    fn filter_by_user() {
        let dir = tempfile::tempdir().unwrap();
        let store = MemoryStore::open(dir.path()).unwrap();
        store
            .append_batch([
                (LogKind::Recommendation, 1, json!({"user": "a"})),
                (LogKind::Recommendation, 1, json!({"user": "b"})),
                (LogKind::Feedback, 2, json!({"user": "a"})),
            ])
            .unwrap();
        let a = store
            .read_log(&LogFilter {
                user: Some("a".into()),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(a.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_profiles_round_trip(
            owner in "[a-zA-Z0-9 ./_-]{1,12}",
            emb in prop::collection::vec(-1e6f32..1e6, 0..16),
            summaries in prop::collection::btree_map("[A-Z][a-z]{1,8}", "[a-z ]{1,30}", 0..5),
            built_at in 0i64..2_000_000_000,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let store = MemoryStore::open(dir.path()).unwrap();
            let p = Profile { owner_id: owner.clone(), kind: ProfileKind::User, summaries, embedding: EmbeddingVector::from(emb), built_at };
            store.put_profile(&p).unwrap();
            drop(store);
            let store = MemoryStore::open(dir.path()).unwrap();
            prop_assert_eq!(store.get_profile(ProfileKind::User, &owner), Some(p));
        }
    }
}
