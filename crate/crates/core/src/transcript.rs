//! Round transcripts: every message between clients, servers and gates, with
//! element and byte counts, plus the binary dump of tagged shuffled shares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac::{check_cardinality, derive_round_key, stream_check, IntegrityPolicy, TaggedBatch, TaggedShare};
use crate::ring::{Modulus, Party, RingElement, Seed, ShareVector, ELEMENT_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sender {
    /// Pre-shuffle client index; harness bookkeeping only.
    Client(usize),
    Party(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// One share vector from a client to one server.
    Upload,
    /// The client's upload tag.
    UploadTag,
    /// A re-masked share sent to the other server.
    ShuffledShare,
    /// The MAC tag riding with a shuffled share.
    ShuffledTag,
    /// Opened tag comparison during verification.
    TagCheck,
    /// Share of a Beaver difference `e` or `f`.
    BeaverOpen,
    /// Input or output share of an ideal gate.
    Gate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenKind {
    BeaverE,
    BeaverF,
    Cmp,
    Threshold,
    UploadCheck,
    TagCheck,
    /// The round's public output.
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u64,
    pub sender: Sender,
    pub kind: MessageKind,
    pub elements: u64,
    pub bytes: u64,
}

/// A value (or vector of values) that became known to some party or gate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    pub kind: OpenKind,
    pub elements: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u64,
    pub entries: Vec<TranscriptEntry>,
    pub openings: Vec<Opening>,
}

impl RoundTranscript {
    pub fn new(round: u64) -> Self {
        RoundTranscript {
            round,
            entries: Vec::new(),
            openings: Vec::new(),
        }
    }

    pub fn record(&mut self, sender: Sender, kind: MessageKind, elements: u64) {
        self.entries.push(TranscriptEntry {
            round: self.round,
            sender,
            kind,
            elements,
            bytes: elements * ELEMENT_BYTES as u64,
        });
    }

    /// Records an opening where each party sends its share of `elements`
    /// values to the other.
    pub fn record_open(&mut self, kind: OpenKind, message: MessageKind, elements: u64) {
        self.openings.push(Opening { kind, elements });
        for party in Party::BOTH {
            self.record(Sender::Party(party.index()), message, elements);
        }
    }

    pub fn opened(&self, kind: OpenKind) -> u64 {
        self.openings
            .iter()
            .filter(|o| o.kind == kind)
            .map(|o| o.elements)
            .sum()
    }

    pub fn bytes_of(&self, kind: MessageKind) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind).map(|e| e.bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommBreakdown {
    /// Upload bytes per client, by pre-shuffle index.
    pub per_client_upload: Vec<u64>,
    /// All server-to-server bytes: shuffled stream, Beaver openings, gates
    /// and tag checks.
    pub server_to_server: u64,
    pub shuffled_stream: u64,
    pub beaver: u64,
    pub gates: u64,
    /// Upload tags, shuffled-share tags and tag checks.
    pub mac_overhead: u64,
    pub total: u64,
}

pub fn comm_account(t: &RoundTranscript) -> CommBreakdown {
    let clients = t
        .entries
        .iter()
        .filter_map(|e| match e.sender {
            Sender::Client(i) => Some(i + 1),
            Sender::Party(_) => None,
        })
        .max()
        .unwrap_or(0);
    let mut per_client_upload = vec![0; clients];
    for e in &t.entries {
        if let Sender::Client(i) = e.sender {
            per_client_upload[i] += e.bytes;
        }
    }
    let shuffled_stream = t.bytes_of(MessageKind::ShuffledShare) + t.bytes_of(MessageKind::ShuffledTag);
    let beaver = t.bytes_of(MessageKind::BeaverOpen);
    let gates = t.bytes_of(MessageKind::Gate);
    let tag_check = t.bytes_of(MessageKind::TagCheck);
    CommBreakdown {
        per_client_upload,
        server_to_server: shuffled_stream + beaver + gates + tag_check,
        shuffled_stream,
        beaver,
        gates,
        mac_overhead: t.bytes_of(MessageKind::UploadTag) + t.bytes_of(MessageKind::ShuffledTag) + tag_check,
        total: t.total_bytes(),
    }
}

/// Checks that the only values opened in a round are Beaver differences, in
/// matched `e`/`f` pairs covering exactly the triples consumed, and outputs
/// of declared gates.
pub fn audit_openings(t: &RoundTranscript, triples_consumed: u64) -> Result<()> {
    let (e, f) = (t.opened(OpenKind::BeaverE), t.opened(OpenKind::BeaverF));
    if e != triples_consumed || f != triples_consumed {
        return Err(Error::Malformed(format!(
            "beaver openings e={e}, f={f} do not match {triples_consumed} consumed triples"
        )));
    }
    for e in &t.entries {
        if let (Sender::Party(_), MessageKind::Upload | MessageKind::UploadTag) = (e.sender, e.kind) {
            return Err(Error::Malformed("server sent a client message".into()));
        }
    }
    Ok(())
}

const DUMP_MAGIC: &[u8; 8] = b"RAINTRSC";
const DUMP_VERSION: u64 = 1;

/// The tagged shuffled shares both servers sent in one round.
///
/// # Byte layout
///
/// Little-endian `u64` words after the magic:
///
/// ```text
/// magic "RAINTRSC", version, p, K, d, round, seed (32 bytes)
/// records until end of file, each: party, d share elements, tag
/// ```
///
/// A truncated file parses to whatever whole records remain; the missing
/// ones surface as a cardinality violation on verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptDump {
    pub modulus: Modulus,
    pub k: usize,
    pub d: usize,
    pub round: u64,
    pub seed: Seed,
    pub batches: [TaggedBatch; 2],
    /// Bytes left over after the last whole record.
    pub trailing_bytes: usize,
}

impl TranscriptDump {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DUMP_MAGIC);
        for v in [
            DUMP_VERSION,
            self.modulus.value(),
            self.k as u64,
            self.d as u64,
            self.round,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.seed.as_bytes());
        for batch in &self.batches {
            for item in &batch.items {
                out.extend_from_slice(&(batch.party.index() as u64).to_le_bytes());
                for e in &item.share.elems {
                    out.extend_from_slice(&e.value().to_le_bytes());
                }
                out.extend_from_slice(&item.tag.value().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::ring::WordReader { bytes, pos: 0 };
        if r.take(8)? != DUMP_MAGIC {
            return Err(Error::Malformed("bad transcript magic".into()));
        }
        let version = r.word()?;
        if version != DUMP_VERSION {
            return Err(Error::Malformed(format!("unsupported transcript version {version}")));
        }
        let m = Modulus::new(r.word()?)?;
        let k = r.word()? as usize;
        let d = r.word()? as usize;
        let round = r.word()?;
        let seed = Seed(r.take(32)?.try_into().expect("32 bytes"));
        if d == 0 {
            return Err(Error::Malformed("zero dimension".into()));
        }
        let record = (d + 2) * ELEMENT_BYTES;
        let mut batches = Party::BOTH.map(|party| TaggedBatch {
            round,
            party,
            items: Vec::new(),
        });
        while r.remaining() >= record {
            let party =
                Party::from_index(r.word()? as usize).map_err(|_| Error::Malformed("bad party index".into()))?;
            // out-of-range residues are kept as-is so verification rejects them
            let elems = (0..d).map(|_| r.word().map(raw_element)).collect::<Result<Vec<_>>>()?;
            let tag = raw_element(r.word()?);
            batches[party.index()].items.push(TaggedShare {
                share: ShareVector::new(party, elems),
                tag,
            });
        }
        Ok(TranscriptDump {
            modulus: m,
            k,
            d,
            round,
            seed,
            batches,
            trailing_bytes: r.remaining(),
        })
    }
}

fn raw_element(v: u64) -> RingElement {
    RingElement::from_raw(v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "violation")]
pub enum Violation {
    Tag {
        party: usize,
        batch_index: usize,
    },
    Cardinality {
        party: usize,
        expected: usize,
        actual: usize,
    },
    Truncated {
        trailing_bytes: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub round: u64,
    pub shares_checked: usize,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives the round key from the embedded seed and checks every tag and
/// the one-share-per-slot cardinality of both batches.
pub fn verify_dump(dump: &TranscriptDump) -> Result<VerifyReport> {
    let key = derive_round_key(dump.modulus, &dump.seed, dump.round, dump.d);
    let mut report = VerifyReport {
        round: dump.round,
        ..Default::default()
    };
    for batch in &dump.batches {
        if check_cardinality(batch, dump.k, IntegrityPolicy::Drop).is_some() {
            report.violations.push(Violation::Cardinality {
                party: batch.party.index(),
                expected: dump.k,
                actual: batch.items.len(),
            });
        }
        let outcome = stream_check(dump.modulus, batch, &key, IntegrityPolicy::Drop)?;
        report.shares_checked += batch.items.len();
        report
            .violations
            .extend(outcome.rejected.into_iter().map(|i| Violation::Tag {
                party: batch.party.index(),
                batch_index: i,
            }));
    }
    if dump.trailing_bytes > 0 {
        report.violations.push(Violation::Truncated {
            trailing_bytes: dump.trailing_bytes,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::tag_share;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dump(k: usize, d: usize) -> TranscriptDump {
        let m = Modulus::mersenne61();
        let seed = Seed::from_u64(3);
        let key = derive_round_key(m, &seed, 2, d);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let batches = Party::BOTH.map(|party| TaggedBatch {
            round: 2,
            party,
            items: (0..k)
                .map(|_| tag_share(m, ShareVector::new(party, m.random_vec(d, &mut rng)), &key.key).unwrap())
                .collect(),
        });
        TranscriptDump {
            modulus: m,
            k,
            d,
            round: 2,
            seed,
            batches,
            trailing_bytes: 0,
        }
    }

    #[test]
    fn dump_round_trip_and_clean_verify() {
        let dmp = dump(4, 5);
        let back = TranscriptDump::from_bytes(&dmp.to_bytes()).unwrap();
        assert_eq!(back, dmp);
        let rep = verify_dump(&back).unwrap();
        assert!(rep.is_clean());
        assert_eq!(rep.shares_checked, 8);
    }

    #[test]
    fn flipped_byte_is_reported_at_its_index() {
        let dmp = dump(4, 5);
        let mut bytes = dmp.to_bytes();
        // header is 8 + 5*8 + 32 bytes; records are (d + 2) words
        let record = 7 * 8;
        let offset = 80 + 2 * record + 8 + 3;
        bytes[offset] ^= 0x10;
        let rep = verify_dump(&TranscriptDump::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(
            rep.violations,
            vec![Violation::Tag {
                party: 0,
                batch_index: 2
            }]
        );
    }

    #[test]
    fn truncation_is_a_cardinality_violation() {
        let bytes = dump(4, 5).to_bytes();
        let rep = verify_dump(&TranscriptDump::from_bytes(&bytes[..bytes.len() - 20]).unwrap()).unwrap();
        assert!(rep.violations.contains(&Violation::Cardinality {
            party: 1,
            expected: 4,
            actual: 3
        }));
        assert!(rep.violations.iter().any(|v| matches!(v, Violation::Truncated { .. })));
        assert!(TranscriptDump::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn accounting() {
        let mut t = RoundTranscript::new(1);
        for i in 0..3 {
            t.record(Sender::Client(i), MessageKind::Upload, 10);
            t.record(Sender::Client(i), MessageKind::Upload, 10);
            t.record(Sender::Client(i), MessageKind::UploadTag, 1);
        }
        t.record_open(OpenKind::BeaverE, MessageKind::BeaverOpen, 4);
        t.record_open(OpenKind::BeaverF, MessageKind::BeaverOpen, 4);
        t.record(Sender::Party(0), MessageKind::ShuffledShare, 10);
        t.record(Sender::Party(0), MessageKind::ShuffledTag, 1);
        let c = comm_account(&t);
        assert_eq!(c.per_client_upload, vec![168; 3]);
        assert_eq!(c.beaver, 128);
        assert_eq!(c.shuffled_stream, 88);
        assert_eq!(c.server_to_server, 216);
        assert_eq!(c.mac_overhead, 32);
        assert_eq!(c.total, 3 * 168 + 216);
        audit_openings(&t, 4).unwrap();
        assert!(audit_openings(&t, 5).is_err());
    }
}
