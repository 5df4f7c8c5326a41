//! Policy files.
//!
//! Two encodings share one header and the canonical entry order
//! (total, `N_A`, `n_A`, `n_B`):
//!
//! * text (`.tmdp.json`): a JSON object `{"header": {...}, "entries": [...]}`
//!   with one `[N_A, n_A, N_B, n_B, block_size, allocation_index, value]`
//!   array per line. Values use shortest round-trip formatting.
//! * binary (`.tmdp.bin`): `TMDP`, `u32` version, `u32` header length, the
//!   JSON header, `u64` entry count, then fixed 29-byte little-endian
//!   entries (four `u32` counts, `u32` block size, `u8` allocation index,
//!   `f64` value bits).
//!
//! Loading detects the encoding from the leading bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Smoothing, SolverConfig};
use crate::error::{Error, Result};
use crate::solver::{enumerate_levels, stored_state_count, PackedAction, Policy};
use crate::state::ContingencyState;

pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"TMDP";
const ENTRY_BYTES: usize = 4 * 4 + 4 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Text,
    Binary,
}

impl Encoding {
    pub fn extension(self) -> &'static str {
        match self {
            Encoding::Text => "tmdp.json",
            Encoding::Binary => "tmdp.bin",
        }
    }

    /// Guesses the encoding from a file name.
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?;
        if name.ends_with(".tmdp.json") {
            Some(Encoding::Text)
        } else if name.ends_with(".tmdp.bin") {
            Some(Encoding::Binary)
        } else {
            None
        }
    }
}

/// Everything in a policy file except the entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyHeader {
    pub format_version: u32,
    pub n_patients: u32,
    pub failure_weight: f64,
    pub block_cost: f64,
    pub allocation_set: Vec<f64>,
    pub min_block: u32,
    pub block_increment: u32,
    pub smoothing: [f64; 4],
    pub entry_count: u64,
}

impl PolicyHeader {
    pub fn of(policy: &Policy) -> Self {
        let c = policy.config();
        PolicyHeader {
            format_version: FORMAT_VERSION,
            n_patients: c.n_patients,
            failure_weight: c.failure_weight,
            block_cost: c.block_cost,
            allocation_set: c.allocation_set.clone(),
            min_block: c.min_block,
            block_increment: c.block_increment,
            smoothing: c.smoothing.as_array(),
            entry_count: policy.entry_count() as u64,
        }
    }

    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            n_patients: self.n_patients,
            failure_weight: self.failure_weight,
            block_cost: self.block_cost,
            allocation_set: self.allocation_set.clone(),
            min_block: self.min_block,
            block_increment: self.block_increment,
            smoothing: Smoothing::from_array(self.smoothing),
        }
    }
}

/// Serializes `policy` in canonical form.
pub fn encode(policy: &Policy, encoding: Encoding) -> Vec<u8> {
    let header = PolicyHeader::of(policy);
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    match encoding {
        Encoding::Text => {
            let mut out = Vec::with_capacity(64 + header_json.len() + policy.entry_count() * 40);
            out.extend_from_slice(b"{\"header\":");
            out.extend_from_slice(&header_json);
            out.extend_from_slice(b",\"entries\":[");
            for (i, (s, a, v)) in policy.entries().enumerate() {
                out.extend_from_slice(if i == 0 { b"\n" } else { b",\n" });
                let row = (
                    s.n_assigned_a,
                    s.n_success_a,
                    s.n_assigned_b,
                    s.n_success_b,
                    a.block_size,
                    a.allocation_index,
                    v,
                );
                serde_json::to_writer(&mut out, &row).expect("entry serializes");
            }
            out.extend_from_slice(b"\n]}\n");
            out
        }
        Encoding::Binary => {
            let mut out = Vec::with_capacity(24 + header_json.len() + policy.entry_count() * ENTRY_BYTES);
            out.extend_from_slice(MAGIC);
            out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
            out.extend_from_slice(&header_json);
            out.extend_from_slice(&header.entry_count.to_le_bytes());
            for (s, a, v) in policy.entries() {
                for x in [
                    s.n_assigned_a,
                    s.n_success_a,
                    s.n_assigned_b,
                    s.n_success_b,
                    a.block_size,
                ] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.push(a.allocation_index);
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            out
        }
    }
}

/// Writes `policy` to `path` atomically.
pub fn save(policy: &Policy, path: &Path, encoding: Encoding) -> Result<PolicyHeader> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = encode(policy, encoding);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(PolicyHeader::of(policy))
}

/// Reads and validates a policy file of either encoding.
pub fn load(path: &Path) -> Result<Policy> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Parses and validates a policy from bytes of either encoding.
pub fn decode(bytes: &[u8]) -> Result<Policy> {
    if bytes.starts_with(MAGIC) {
        decode_binary(bytes)
    } else {
        decode_text(bytes)
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptFile(msg.into())
}

#[derive(Deserialize)]
struct VersionProbe {
    header: ProbeHeader,
}

#[derive(Deserialize)]
struct ProbeHeader {
    format_version: u32,
}

type TextEntry = (u32, u32, u32, u32, u32, u32, f64);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextFile {
    header: PolicyHeader,
    entries: Vec<TextEntry>,
}

fn decode_text(bytes: &[u8]) -> Result<Policy> {
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("not a policy file: {e}")))?;
    check_version(probe.header.format_version)?;
    let file: TextFile = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if file.header.entry_count != file.entries.len() as u64 {
        return Err(corrupt(format!(
            "header declares {} entries but {} are present",
            file.header.entry_count,
            file.entries.len()
        )));
    }
    let config = checked_config(&file.header)?;
    let mut packed = Vec::with_capacity(file.entries.len());
    for (i, &(na, sa, nb, sb, block, idx, v)) in file.entries.iter().enumerate() {
        let idx = u8::try_from(idx).map_err(|_| corrupt(format!("entry {i}: allocation index {idx} out of range")))?;
        packed.push(entry(i, [na, sa, nb, sb], block, idx, v)?);
    }
    Policy::from_entries(config, schedule_for(&file.header)?, packed)
}

fn decode_binary(bytes: &[u8]) -> Result<Policy> {
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    check_version(version)?;
    let header_len = r.u32("header length")? as usize;
    let header_bytes = r.take(header_len, "header")?;
    let header: PolicyHeader = serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(corrupt(format!(
            "header version {} disagrees with file version {version}",
            header.format_version
        )));
    }
    let count = r.u64("entry count")?;
    if count != header.entry_count {
        return Err(corrupt(format!(
            "entry count {count} disagrees with header count {}",
            header.entry_count
        )));
    }
    let remaining = bytes.len() - r.pos;
    if (remaining / ENTRY_BYTES) as u64 != count || !remaining.is_multiple_of(ENTRY_BYTES) {
        return Err(corrupt(format!(
            "{remaining} bytes of entries cannot hold {count} entries of {ENTRY_BYTES} bytes"
        )));
    }
    let config = checked_config(&header)?;
    let schedule = schedule_for(&header)?;
    let mut packed = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let mut counts = [0u32; 4];
        for c in &mut counts {
            *c = r.u32("entry")?;
        }
        let block = r.u32("entry")?;
        let idx = r.take(1, "entry")?[0];
        let v = f64::from_bits(r.u64("entry")?);
        packed.push(entry(i, counts, block, idx, v)?);
    }
    Policy::from_entries(config, schedule, packed)
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn entry(i: usize, counts: [u32; 4], block: u32, idx: u8, v: f64) -> Result<(ContingencyState, PackedAction, f64)> {
    let [na, sa, nb, sb] = counts;
    let s = ContingencyState {
        n_assigned_a: na,
        n_success_a: sa,
        n_assigned_b: nb,
        n_success_b: sb,
    };
    if na.checked_add(nb).is_none() || !s.is_consistent() {
        return Err(corrupt(format!(
            "entry {i}: inconsistent table ({na}, {sa}, {nb}, {sb})"
        )));
    }
    Ok((
        s,
        PackedAction {
            block_size: block,
            allocation_index: idx,
        },
        v,
    ))
}

/// Validates the echoed configuration and bounds the work implied by it
/// before anything proportional to `N` is allocated.
fn checked_config(header: &PolicyHeader) -> Result<SolverConfig> {
    let config = header.config();
    config.validate().map_err(|e| corrupt(format!("header: {e}")))?;
    let n = u64::from(config.n_patients);
    let t_min = u64::from(config.min_block);
    let kappa = u64::from(config.block_increment);
    let candidates = if 2 * t_min <= n {
        (n - t_min) / kappa - (t_min - 1) / kappa
    } else {
        0
    };
    // Every live interior level stores at least one entry; levels closer to
    // the end than the smallest two-arm block may be dead.
    let spread = config
        .allocation_set
        .iter()
        .map(|&p| p.min(1.0 - p))
        .fold(0.0f64, f64::max);
    let dead_span = (1.0 / (2.0 * spread)).ceil().min(n as f64) as u64 / kappa + 2;
    if candidates > header.entry_count + dead_span {
        return Err(corrupt(format!(
            "header: {candidates} candidate levels cannot fit in {} entries",
            header.entry_count
        )));
    }
    Ok(config)
}

fn schedule_for(header: &PolicyHeader) -> Result<crate::solver::LevelSchedule> {
    let schedule = enumerate_levels(&header.config()).map_err(|e| corrupt(format!("header: {e}")))?;
    let expected = stored_state_count(&schedule);
    if expected != header.entry_count {
        return Err(corrupt(format!(
            "header declares {} entries but the schedule requires {expected}",
            header.entry_count
        )));
    }
    Ok(schedule)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve;

    fn toy() -> Policy {
        solve(
            &SolverConfig::new(2, 4.0, 0.01)
                .with_allocation_set(vec![0.5])
                .with_min_block(1)
                .with_block_increment(1),
        )
        .unwrap()
    }

    fn small() -> Policy {
        solve(&SolverConfig::new(12, 3.0, 0.02).with_min_block(2)).unwrap()
    }

    #[test]
    fn both_encodings_round_trip_bit_exact() {
        let p = small();
        for enc in [Encoding::Text, Encoding::Binary] {
            let q = decode(&encode(&p, enc)).unwrap();
            assert_eq!(q, p);
            for ((_, _, a), (_, _, b)) in p.entries().zip(q.entries()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn toy_has_one_entry() {
        let bytes = encode(&toy(), Encoding::Text);
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.contains("\"entry_count\":1"));
        let entries = text.lines().filter(|l| l.starts_with('[')).count();
        assert_eq!(entries, 1);
        assert!(text.contains("\n[0,0,0,0,2,0,"));
    }

    #[test]
    fn encoding_is_canonical() {
        let p = small();
        for enc in [Encoding::Text, Encoding::Binary] {
            assert_eq!(encode(&p, enc), encode(&p.clone(), enc));
        }
    }

    #[test]
    fn truncation_is_corrupt() {
        let p = small();
        for enc in [Encoding::Text, Encoding::Binary] {
            let bytes = encode(&p, enc);
            for cut in [2, 7, bytes.len() / 2, bytes.len() - 3] {
                let r = decode(&bytes[..bytes.len() - cut]);
                assert!(matches!(r, Err(Error::CorruptFile(_))), "{enc:?} cut {cut}: {r:?}");
            }
        }
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut bytes = encode(&small(), Encoding::Binary);
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn allocation_index_out_of_range_names_the_entry() {
        let p = toy();
        let text = String::from_utf8(encode(&p, Encoding::Text)).unwrap();
        let bad = text.replace("[0,0,0,0,2,0,", "[0,0,0,0,2,1,");
        match decode(bad.as_bytes()) {
            Err(Error::CorruptFile(msg)) => assert!(msg.contains("entry 0"), "{msg}"),
            other => panic!("{other:?}"),
        }

        let mut bin = encode(&p, Encoding::Binary);
        let at = bin.len() - 9;
        bin[at] = 1;
        assert!(matches!(decode(&bin), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn version_mismatch() {
        let p = toy();
        let text = String::from_utf8(encode(&p, Encoding::Text)).unwrap();
        let bad = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(
            decode(bad.as_bytes()),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
        let mut bin = encode(&p, Encoding::Binary);
        bin[4] = 9;
        assert!(matches!(decode(&bin), Err(Error::UnsupportedVersion { found: 9, .. })));
    }

    #[test]
    fn oversized_header_is_rejected_cheaply() {
        let p = toy();
        let text = String::from_utf8(encode(&p, Encoding::Text)).unwrap();
        let bad = text.replace("\"n_patients\":2", "\"n_patients\":4000000000");
        assert!(matches!(decode(bad.as_bytes()), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = small();
        for enc in [Encoding::Text, Encoding::Binary] {
            let path = dir.path().join(format!("p.{}", enc.extension()));
            let header = save(&p, &path, enc).unwrap();
            assert_eq!(header.entry_count, p.entry_count() as u64);
            assert_eq!(Encoding::from_path(&path), Some(enc));
            assert_eq!(load(&path).unwrap(), p);
        }
        let missing = dir.path().join("nope.tmdp.bin");
        match load(&missing) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
    }
}
