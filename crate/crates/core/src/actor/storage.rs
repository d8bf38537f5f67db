use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::critic::Observation;
use crate::error::{argument, Error, Result};

/// How many of the stored observations the estimators look at, as a function
/// of the outer iteration `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowPolicy {
    Fixed { length: usize },
    /// `min(max, ⌈coef · ln(t + 2)⌉)`.
    Logarithmic { max: usize, coef: f64 },
}

impl WindowPolicy {
    pub fn length_at(&self, t: usize) -> usize {
        match *self {
            Self::Fixed { length } => length,
            Self::Logarithmic { max, coef } => {
                let n = (coef * ((t + 2) as f64).ln()).ceil().max(1.0) as usize;
                n.min(max)
            }
        }
    }

    pub fn capacity(&self) -> usize {
        match *self {
            Self::Fixed { length } => length,
            Self::Logarithmic { max, .. } => max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { length } if length == 0 => Err(Error::Config("window length must be positive".into())),
            Self::Logarithmic { max, coef } if max == 0 || !(coef > 0.0) => {
                Err(Error::Config("logarithmic window needs max > 0 and coef > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Ring buffer holding the latest `capacity` observations; estimators read
/// the newest `window` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStorage {
    buf: VecDeque<Observation>,
    capacity: usize,
    window: usize,
}

impl ReplayStorage {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(argument("storage capacity must be positive"));
        }
        Ok(Self {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            window: capacity,
        })
    }

    pub fn push(&mut self, obs: Observation) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(obs);
    }

    pub fn set_window(&mut self, len: usize) {
        self.window = len.clamp(1, self.capacity);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Current window length `T_t` (bounded by what has been stored).
    pub fn window_len(&self) -> usize {
        self.window.min(self.buf.len())
    }

    /// The latest `T_t` observations, oldest first.
    pub fn window(&self) -> impl ExactSizeIterator<Item = &Observation> + Clone {
        self.buf.range(self.buf.len() - self.window_len()..)
    }

    pub fn latest(&self) -> Option<&Observation> {
        self.buf.back()
    }

    /// One JSON object per line, oldest first.
    pub fn dump_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for obs in &self.buf {
            serde_json::to_writer(&mut out, obs)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_ndjson<R: BufRead>(input: R, capacity: usize) -> Result<Self> {
        let mut storage = Self::new(capacity)?;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            storage.push(serde_json::from_str(&line)?);
        }
        Ok(storage)
    }
}
