//! Event sequences, the JSON dataset format, splitting and mini-batching.
//!
//! Files look like
//!
//! ```json
//! {"dim_process": 2, "sequences": [[{"k": 1, "t": 0.5}, {"k": 2, "t": 1.5}]]}
//! ```
//!
//! with event types numbered from 1.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// One marked event. `k` is the 1-based event type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub k: usize,
    pub t: f64,
}

impl Event {
    pub fn new(k: usize, t: f64) -> Self {
        Event { k, t }
    }

    /// 0-based type index.
    pub fn type_index(&self) -> usize {
        self.k - 1
    }
}

/// Events with strictly increasing times and types in `1..=K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Event>", into = "Vec<Event>")]
pub struct EventSequence {
    events: Vec<Event>,
}

impl TryFrom<Vec<Event>> for EventSequence {
    type Error = Error;

    fn try_from(events: Vec<Event>) -> Result<Self> {
        for w in events.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Data(format!(
                    "event times must be strictly increasing, got {} then {}",
                    w[0].t, w[1].t
                )));
            }
        }
        if let Some(e) = events.iter().find(|e| e.k == 0 || !e.t.is_finite()) {
            return Err(Error::Data(format!("invalid event {:?}", e)));
        }
        Ok(EventSequence { events })
    }
}

impl From<EventSequence> for Vec<Event> {
    fn from(seq: EventSequence) -> Self {
        seq.events
    }
}

impl EventSequence {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        Self::try_from(events)
    }

    /// Validates types against `num_types` as well as ordering.
    pub fn with_types(events: Vec<Event>, num_types: usize) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.k > num_types) {
            return Err(Error::Data(format!(
                "unknown event type {} (K = {num_types})",
                e.k
            )));
        }
        Self::new(events)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.t)
    }

    pub fn first_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }

    pub fn max_type(&self) -> usize {
        self.events.iter().map(|e| e.k).max().unwrap_or(0)
    }

    /// `t_j - t_{j-1}` for `j = 2..=N`.
    pub fn inter_arrivals(&self) -> Vec<f64> {
        self.events.windows(2).map(|w| w[1].t - w[0].t).collect()
    }
}

/// A collection of sequences sharing the number of event types `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_types: usize,
    pub sequences: Vec<EventSequence>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    dim_process: usize,
    sequences: Vec<Vec<Event>>,
}

/// Options applied while loading a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Divide every timestamp by this constant.
    pub time_scale: Option<f64>,
    /// Push tied timestamps forward by this amount instead of rejecting them.
    pub jitter: Option<f64>,
}

/// Shape of a dataset in the usual summary-table form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_types: usize,
    pub num_sequences: usize,
    pub min_length: usize,
    pub mean_length: f64,
    pub max_length: usize,
    pub num_events: usize,
    pub type_counts: Vec<usize>,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "K              {}", self.num_types)?;
        writeln!(f, "sequences      {}", self.num_sequences)?;
        writeln!(
            f,
            "length         min {} / mean {:.2} / max {}",
            self.min_length, self.mean_length, self.max_length
        )?;
        write!(f, "events         {}", self.num_events)
    }
}

impl Dataset {
    pub fn new(num_types: usize, sequences: Vec<EventSequence>) -> Result<Self> {
        if num_types == 0 {
            return Err(Error::Data("K must be at least 1".into()));
        }
        for (i, s) in sequences.iter().enumerate() {
            if s.max_type() > num_types {
                return Err(Error::Data(format!(
                    "sequence {i}: unknown event type {} (K = {num_types})",
                    s.max_type()
                )));
            }
        }
        Ok(Dataset {
            num_types,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let lens: Vec<usize> = self.sequences.iter().map(EventSequence::len).collect();
        let mut type_counts = vec![0; self.num_types];
        for s in &self.sequences {
            for e in s.events() {
                type_counts[e.type_index()] += 1;
            }
        }
        let n = lens.len().max(1);
        DatasetStats {
            num_types: self.num_types,
            num_sequences: lens.len(),
            min_length: lens.iter().copied().min().unwrap_or(0),
            mean_length: lens.iter().sum::<usize>() as f64 / n as f64,
            max_length: lens.iter().copied().max().unwrap_or(0),
            num_events: lens.iter().sum(),
            type_counts,
        }
    }

    pub fn from_json_str(text: &str, options: &LoadOptions) -> Result<Self> {
        let raw: DatasetFile = serde_json::from_str(text)?;
        let k = raw.dim_process;
        if k == 0 {
            return Err(Error::Data("dim_process must be at least 1".into()));
        }
        let mut sequences = Vec::with_capacity(raw.sequences.len());
        for (i, mut events) in raw.sequences.into_iter().enumerate() {
            if let Some(e) = events.iter().find(|e| e.k == 0 || e.k > k) {
                return Err(Error::Data(format!(
                    "sequence {i}: unknown event type {} (K = {k})",
                    e.k
                )));
            }
            if events.is_empty() {
                return Err(Error::Data(format!("sequence {i} is empty")));
            }
            if let Some(scale) = options.time_scale {
                if !(scale > 0.0) {
                    return Err(Error::Config(format!("time scale must be positive, got {scale}")));
                }
                for e in &mut events {
                    e.t /= scale;
                }
            }
            if let Some(eps) = options.jitter {
                for j in 1..events.len() {
                    if events[j].t == events[j - 1].t {
                        events[j].t = events[j - 1].t + eps;
                    } else if events[j].t < events[j - 1].t
                        && events[j - 1].t - events[j].t < eps
                    {
                        // a tie pushed past its successor
                        events[j].t = events[j - 1].t + eps;
                    }
                }
            }
            let seq = EventSequence::new(events)
                .map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
            sequences.push(seq);
        }
        Dataset::new(k, sequences)
    }

    pub fn load(path: &Path, options: &LoadOptions) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Data(format!("cannot read dataset {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text, options)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = DatasetFile {
            dim_process: self.num_types,
            sequences: self
                .sequences
                .iter()
                .map(|s| s.events().to_vec())
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Deterministic train/test split. Every sequence lands in exactly one part.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.is_empty() {
            return Err(Error::Data("cannot split an empty dataset".into()));
        }
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "train fraction must lie in [0, 1], got {train_fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, 0x5917));
        let n_train = (train_fraction * self.len() as f64).round() as usize;
        let pick = |idx: &[usize]| Dataset {
            num_types: self.num_types,
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
        };
        Ok((pick(&order[..n_train]), pick(&order[n_train..])))
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(fingerprint_bytes(&bytes))
}

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Mini-batch of sequences padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Index of each member in the source dataset.
    pub indices: Vec<usize>,
    /// `[batch][pad_len]`, 0 on padding.
    pub types: Vec<Vec<usize>>,
    pub times: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_sequences(data: &Dataset, indices: &[usize], pad_len: usize) -> Result<Self> {
        let max_len = indices
            .iter()
            .map(|&i| data.sequences[i].len())
            .max()
            .unwrap_or(0);
        if pad_len < max_len {
            return Err(Error::Config(format!(
                "pad length {pad_len} shorter than longest sequence {max_len}"
            )));
        }
        let mut b = Batch {
            indices: indices.to_vec(),
            types: Vec::new(),
            times: Vec::new(),
            mask: Vec::new(),
            lengths: Vec::new(),
        };
        for &i in indices {
            let s = &data.sequences[i];
            let mut ty = vec![0; pad_len];
            let mut tm = vec![0.0; pad_len];
            let mut mk = vec![false; pad_len];
            for (j, e) in s.events().iter().enumerate() {
                ty[j] = e.k;
                tm[j] = e.t;
                mk[j] = true;
            }
            b.types.push(ty);
            b.times.push(tm);
            b.mask.push(mk);
            b.lengths.push(s.len());
        }
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn pad_len(&self) -> usize {
        self.types.first().map_or(0, Vec::len)
    }

    /// The unpadded member `i`; only positions under the mask are read.
    pub fn sequence(&self, i: usize) -> EventSequence {
        let events = (0..self.pad_len())
            .filter(|&j| self.mask[i][j])
            .map(|j| Event::new(self.types[i][j], self.times[i][j]))
            .collect();
        EventSequence { events }
    }
}

/// Shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive_seed(seed, 0xE90C), epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Padded batches for one epoch.
pub fn batches(data: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if data.is_empty() {
        return Err(Error::Data("no sequences to batch".into()));
    }
    epoch_batches(data.len(), batch_size, seed, epoch)?
        .iter()
        .map(|idx| {
            let pad = idx.iter().map(|&i| data.sequences[i].len()).max().unwrap_or(0);
            Batch::from_sequences(data, idx, pad)
        })
        .collect()
}
