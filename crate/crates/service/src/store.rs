use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use cmind_core::pipeline::LocalizationResult;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ServiceError;

const REPORT_FILE: &str = "report.txt";
const SOURCE_FILE: &str = "source.bin";
const STATUS_FILE: &str = "status.json";
const RESULT_FILE: &str = "result.json";

/// Sixteen lowercase hex characters drawn from the thread CSPRNG.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct JobId(String);

impl JobId {
    pub fn generate() -> Self {
        let bytes: [u8; 8] = rand::rng().random();
        JobId(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for JobId {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(JobId(s.to_string()))
        } else {
            Err(ServiceError::UnknownJob(s.to_string()))
        }
    }
}

impl TryFrom<String> for JobId {
    type Error = ServiceError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<JobId> for String {
    fn from(id: JobId) -> String {
        id.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Failed)
    }

    /// queued -> running -> {completed, failed}. A queued job may also fail
    /// directly when its inputs cannot be read.
    fn may_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Queued, JobStatus::Failed)
                | (JobStatus::Running, JobStatus::Completed)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub status: JobStatus,
    pub submitted_at: DateTime<Utc>,
    /// sha256 of the uploaded archive.
    pub archive_digest: String,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
}

/// One directory per job under `<root>/jobs/`. Status files are replaced
/// atomically, so readers never see a partial write and never take the
/// lock; writers are serialized by it.
pub struct JobStore {
    jobs: PathBuf,
    write_lock: Mutex<()>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl JobStore {
    pub fn open(data_root: &Path) -> Result<Self, ServiceError> {
        let jobs = data_root.join("jobs");
        fs::create_dir_all(&jobs).map_err(io_err(&jobs))?;
        Ok(JobStore {
            jobs,
            write_lock: Mutex::new(()),
        })
    }

    fn dir(&self, id: &JobId) -> PathBuf {
        self.jobs.join(id.as_str())
    }

    /// Persists a new queued job under a fresh id.
    pub fn create(&self, report: &str, archive: &[u8]) -> Result<JobRecord, ServiceError> {
        let _guard = self.write_lock.lock().expect("poisoned");
        let (id, dir) = loop {
            let id = JobId::generate();
            let dir = self.dir(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&dir)(e)),
            }
        };
        let report_path = dir.join(REPORT_FILE);
        fs::write(&report_path, report).map_err(io_err(&report_path))?;
        let source_path = dir.join(SOURCE_FILE);
        fs::write(&source_path, archive).map_err(io_err(&source_path))?;
        let record = JobRecord {
            id,
            status: JobStatus::Queued,
            submitted_at: Utc::now(),
            archive_digest: hex::encode(Sha256::digest(archive)),
            finished_at: None,
        };
        self.write_record(&record)?;
        Ok(record)
    }

    fn write_record(&self, record: &JobRecord) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(record).expect("serializable");
        write_atomic(&self.dir(&record.id).join(STATUS_FILE), &bytes)
    }

    pub fn get(&self, id: &JobId) -> Result<JobRecord, ServiceError> {
        let path = self.dir(id).join(STATUS_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ServiceError::UnknownJob(id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display())))
    }

    pub fn report(&self, id: &JobId) -> Result<String, ServiceError> {
        let path = self.dir(id).join(REPORT_FILE);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn archive(&self, id: &JobId) -> Result<Vec<u8>, ServiceError> {
        let path = self.dir(id).join(SOURCE_FILE);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn mark_running(&self, id: &JobId) -> Result<JobRecord, ServiceError> {
        self.transition(id, JobStatus::Running, None)
    }

    /// Stores the result, then flips the status to terminal.
    pub fn finish(
        &self,
        id: &JobId,
        status: JobStatus,
        result: &LocalizationResult,
    ) -> Result<JobRecord, ServiceError> {
        self.transition(id, status, Some(result))
    }

    fn transition(
        &self,
        id: &JobId,
        next: JobStatus,
        result: Option<&LocalizationResult>,
    ) -> Result<JobRecord, ServiceError> {
        let _guard = self.write_lock.lock().expect("poisoned");
        let mut record = self.get(id)?;
        if !record.status.may_become(next) {
            return Err(ServiceError::InvalidTransition {
                id: id.to_string(),
                from: record.status,
                to: next,
            });
        }
        if let Some(r) = result {
            write_atomic(&self.dir(id).join(RESULT_FILE), r.to_json().as_bytes())?;
        }
        record.status = next;
        if next.is_terminal() {
            record.finished_at = Some(Utc::now());
        }
        self.write_record(&record)?;
        Ok(record)
    }

    /// Serialized result of a terminal job.
    pub fn result_json(&self, id: &JobId) -> Result<String, ServiceError> {
        let record = self.get(id)?;
        if !record.status.is_terminal() {
            return Err(ServiceError::NotReady(id.to_string()));
        }
        let path = self.dir(id).join(RESULT_FILE);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn list(&self) -> Result<Vec<JobRecord>, ServiceError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.jobs).map_err(io_err(&self.jobs))? {
            let entry = entry.map_err(io_err(&self.jobs))?;
            let Ok(id) = entry.file_name().to_string_lossy().parse::<JobId>() else {
                continue;
            };
            match self.get(&id) {
                Ok(r) => out.push(r),
                Err(e) => log::warn!("skipping job directory {id}: {e}"),
            }
        }
        out.sort_by(|a, b| (a.submitted_at, &a.id).cmp(&(b.submitted_at, &b.id)));
        Ok(out)
    }

    /// Startup recovery: jobs caught mid-run fail with reason
    /// `interrupted`; queued jobs are returned, oldest first, for requeueing.
    pub fn recover(&self) -> Result<Vec<JobId>, ServiceError> {
        let mut queued = Vec::new();
        for record in self.list()? {
            match record.status {
                JobStatus::Running => {
                    let mut result = LocalizationResult::failed("interrupted");
                    result.id = Some(record.id.to_string());
                    self.finish(&record.id, JobStatus::Failed, &result)?;
                    log::warn!("job {} was interrupted by a restart", record.id);
                }
                JobStatus::Queued => queued.push(record.id),
                _ => {}
            }
        }
        Ok(queued)
    }
}
