//! The two untrusted stores: an encrypted store holding sensitive tuples
//! (plus fakes) and a plaintext store holding non-sensitive tuples.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binning::{BinLayout, LayoutMode};
use crate::crypto::{Keys, FAKE_OCCURRENCE_BASE};
use crate::error::{QbError, Result};
use crate::model::{AttributeValue, PartitionedRelation, Row};
use crate::seed::Seed;

/// One encrypted tuple as the cloud sees it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherTuple {
    pub tuple_ref: String,
    pub token: String,
    pub blob: String,
}

/// How the encrypted store charges work for a request.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanCharging {
    /// One full scan per request, however many tokens it carries.
    #[default]
    PerQuery,
    /// One full scan per token.
    PerToken,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCounters {
    pub requests: u64,
    pub rows_scanned: u64,
    pub index_lookups: u64,
    pub tuples_returned: u64,
    pub bytes_returned: u64,
}

#[derive(Clone, Debug)]
pub struct EncryptedStore {
    tuples: Vec<CipherTuple>,
    by_token: HashMap<String, usize>,
    pub charging: ScanCharging,
    counters: StoreCounters,
}

impl EncryptedStore {
    pub fn new(tuples: Vec<CipherTuple>) -> Self {
        let by_token = tuples
            .iter()
            .enumerate()
            .map(|(i, t)| (t.token.clone(), i))
            .collect();
        EncryptedStore {
            tuples,
            by_token,
            charging: ScanCharging::default(),
            counters: StoreCounters::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[CipherTuple] {
        &self.tuples
    }

    /// Direct access for corruption tests.
    pub fn tuples_mut(&mut self) -> &mut [CipherTuple] {
        &mut self.tuples
    }

    /// Returns every tuple whose token is in `tokens`, in storage order.
    /// Work is charged as a scan over the whole store.
    pub fn fetch(&mut self, tokens: &[String]) -> Vec<CipherTuple> {
        let scans = match self.charging {
            ScanCharging::PerQuery => 1,
            ScanCharging::PerToken => tokens.len() as u64,
        };
        self.counters.requests += 1;
        self.counters.rows_scanned += scans * self.tuples.len() as u64;
        let mut hits: Vec<usize> = tokens.iter().filter_map(|t| self.by_token.get(t).copied()).collect();
        hits.sort_unstable();
        hits.dedup();
        let out: Vec<CipherTuple> = hits.into_iter().map(|i| self.tuples[i].clone()).collect();
        self.counters.tuples_returned += out.len() as u64;
        self.counters.bytes_returned += out.iter().map(|t| t.blob.len() as u64).sum::<u64>();
        out
    }

    pub fn counters(&self) -> &StoreCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = StoreCounters::default();
    }
}

#[derive(Clone, Debug)]
pub struct PlaintextStore {
    attribute: String,
    rows: Vec<Row>,
    index: HashMap<AttributeValue, Vec<usize>>,
    counters: StoreCounters,
}

impl PlaintextStore {
    pub fn new(attribute: &str, rows: Vec<Row>) -> Result<Self> {
        let mut index: HashMap<AttributeValue, Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            let v = r.value(attribute).ok_or_else(|| QbError::MissingAttribute {
                row_id: r.row_id.clone(),
                attribute: attribute.to_string(),
            })?;
            index.entry(v.clone()).or_default().push(i);
        }
        Ok(PlaintextStore {
            attribute: attribute.to_string(),
            rows,
            index,
            counters: StoreCounters::default(),
        })
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Index lookup of `attribute IN predicates`, rows in storage order.
    pub fn fetch(&mut self, predicates: &[AttributeValue]) -> Vec<Row> {
        self.counters.requests += 1;
        self.counters.index_lookups += predicates.len() as u64;
        let mut hits: Vec<usize> = predicates
            .iter()
            .filter_map(|p| self.index.get(p))
            .flatten()
            .copied()
            .collect();
        hits.sort_unstable();
        hits.dedup();
        let out: Vec<Row> = hits.into_iter().map(|i| self.rows[i].clone()).collect();
        self.counters.rows_scanned += out.len() as u64;
        self.counters.tuples_returned += out.len() as u64;
        self.counters.bytes_returned += out.iter().map(|r| r.encoded_len() as u64).sum::<u64>();
        out
    }

    pub fn counters(&self) -> &StoreCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = StoreCounters::default();
    }
}

/// Auxiliary information the cloud is assumed to know.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicInfo {
    pub relation: String,
    pub attribute: String,
    pub encrypted_tuples: usize,
    pub plaintext_tuples: usize,
    pub sensitive_values: usize,
    pub nonsensitive_values: usize,
    /// Number of values present on both sides.
    pub shared_values: usize,
    /// The bin construction in use; the algorithm itself is not secret.
    pub layout_mode: LayoutMode,
}

/// Contents of a sealed tuple before padding.
#[derive(Serialize, Deserialize)]
struct Payload {
    fake: bool,
    row: Option<Row>,
}

/// Decrypted tuple contents: `None` for a fake.
pub fn open_tuple(keys: &Keys, t: &CipherTuple) -> Result<Option<Row>> {
    let bytes = keys.open(&t.tuple_ref, &t.blob)?;
    let p: Payload = serde_json::from_slice(&bytes).map_err(|_| QbError::Integrity(t.tuple_ref.clone()))?;
    match (p.fake, p.row) {
        (true, _) => Ok(None),
        (false, Some(r)) => Ok(Some(r)),
        (false, None) => Err(QbError::Integrity(t.tuple_ref.clone())),
    }
}

/// Number of fake tuples carrying `value`'s tokens. Fake `j` of sensitive
/// bin `i` is attributed to the `(j mod L)`-th value of the bin, `L` being
/// the bin's value count, at fake occurrence `j / L`.
pub fn fake_count_for(layout: &BinLayout, bin: usize, position: usize) -> u64 {
    let len = layout.sensitive_values(bin).len() as u64;
    let fakes = layout.fake_counts[bin];
    let p = position as u64;
    if len == 0 || fakes <= p {
        0
    } else {
        (fakes - p).div_ceil(len)
    }
}

/// Every token under which tuples of `value` (real and fake) are stored.
pub fn tokens_for(keys: &Keys, layout: &BinLayout, bin: usize, value: &AttributeValue) -> Vec<String> {
    let values = layout.sensitive_values(bin);
    let Some(pos) = values.iter().position(|v| v == value) else {
        return Vec::new();
    };
    let real = layout.sensitive_count(value);
    let fake = fake_count_for(layout, bin, pos);
    (0..real)
        .chain((0..fake).map(|t| FAKE_OCCURRENCE_BASE + t))
        .map(|o| keys.token(value, o))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Stores {
    pub encrypted: EncryptedStore,
    pub plaintext: PlaintextStore,
    pub public: PublicInfo,
}

/// Plaintext payloads are padded to a multiple of this many bytes, at
/// least as wide as the longest one, so ciphertext length is uniform.
const PAD_BLOCK: usize = 64;

/// Encrypts the sensitive rows (plus the layout's fakes) and places the
/// non-sensitive rows in the clear.
pub fn upload(rel: &PartitionedRelation, layout: &BinLayout, keys: &Keys, seed: Seed) -> Result<Stores> {
    let idx = layout.index();
    let mut sensitive: Vec<&Row> = rel.sensitive_rows.iter().collect();
    sensitive.sort_by(|a, b| a.row_id.cmp(&b.row_id));

    let mut payloads: Vec<(String, Vec<u8>)> = Vec::new();
    let mut occurrence: BTreeMap<&AttributeValue, u64> = BTreeMap::new();
    for r in sensitive {
        let v = rel.key_of(r);
        if idx.sensitive(v).is_none() {
            return Err(QbError::ValueNotInLayout(v.clone()));
        }
        let o = occurrence.entry(v).or_default();
        let token = keys.token(v, *o);
        *o += 1;
        let body = serde_json::to_vec(&Payload {
            fake: false,
            row: Some(r.clone()),
        })?;
        payloads.push((token, body));
    }
    for i in 0..layout.sb_count() {
        let values = layout.sensitive_values(i);
        for j in 0..layout.fake_counts[i] {
            let len = values.len() as u64;
            let v = &values[(j % len) as usize];
            let token = keys.token(v, FAKE_OCCURRENCE_BASE + j / len);
            let body = serde_json::to_vec(&Payload { fake: true, row: None })?;
            payloads.push((token, body));
        }
    }

    let width = payloads
        .iter()
        .map(|(_, b)| b.len())
        .max()
        .unwrap_or(0)
        .div_ceil(PAD_BLOCK)
        .max(1)
        * PAD_BLOCK;
    let mut rng = seed.derive("upload").rng();
    payloads.shuffle(&mut rng);
    let tuples = payloads
        .into_iter()
        .enumerate()
        .map(|(n, (token, mut body))| {
            body.resize(width, b' ');
            CipherTuple {
                tuple_ref: format!("c{n:06}"),
                token,
                blob: keys.seal(&body, &mut rng),
            }
        })
        .collect::<Vec<_>>();

    let public = PublicInfo {
        relation: rel.name.clone(),
        attribute: rel.searchable_attribute.clone(),
        encrypted_tuples: tuples.len(),
        plaintext_tuples: rel.nonsensitive_rows.len(),
        sensitive_values: layout.sensitive_counts.len(),
        nonsensitive_values: layout.nonsensitive_bins.iter().flatten().flatten().count(),
        shared_values: layout
            .sensitive_counts
            .iter()
            .filter(|v| idx.nonsensitive(&v.value).is_some())
            .count(),
        layout_mode: layout.mode,
    };
    let mut plain_rows = rel.nonsensitive_rows.clone();
    plain_rows.sort_by(|a, b| a.row_id.cmp(&b.row_id));
    Ok(Stores {
        encrypted: EncryptedStore::new(tuples),
        plaintext: PlaintextStore::new(&rel.searchable_attribute, plain_rows)?,
        public,
    })
}

pub const ENCRYPTED_FILE: &str = "encrypted.ndjson";
pub const PLAINTEXT_FILE: &str = "plaintext.ndjson";
pub const PUBLIC_FILE: &str = "public.json";

pub fn write_ndjson<T: Serialize, W: Write>(items: &[T], w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QbError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl Stores {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_ndjson(self.encrypted.tuples(), File::create(dir.join(ENCRYPTED_FILE))?)?;
        write_ndjson(self.plaintext.rows(), File::create(dir.join(PLAINTEXT_FILE))?)?;
        let mut f = File::create(dir.join(PUBLIC_FILE))?;
        serde_json::to_writer_pretty(&mut f, &self.public)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Stores> {
        let public: PublicInfo = serde_json::from_reader(BufReader::new(File::open(dir.join(PUBLIC_FILE))?))?;
        let tuples = read_ndjson(BufReader::new(File::open(dir.join(ENCRYPTED_FILE))?))?;
        let rows = read_ndjson(BufReader::new(File::open(dir.join(PLAINTEXT_FILE))?))?;
        Ok(Stores {
            encrypted: EncryptedStore::new(tuples),
            plaintext: PlaintextStore::new(&public.attribute, rows)?,
            public,
        })
    }
}
