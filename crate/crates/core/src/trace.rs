use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::Real;

/// A named, uniformly sampled series.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel<T = f64> {
    pub name: String,
    pub values: Vec<T>,
}

/// Uniformly sampled multi-channel time series.
///
/// Sample `k` is taken at `k * sample_period` from the start of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T = f64> {
    pub sample_period: T,
    pub channels: Vec<Channel<T>>,
    /// Free-form provenance (generator seed, archetype, ...).
    pub metadata: BTreeMap<String, String>,
}

impl<T: Real> Trace<T> {
    pub fn new(sample_period: T) -> Result<Self> {
        if !(sample_period > T::zero()) || !sample_period.is_finite() {
            return Err(Error::invalid(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        Ok(Self {
            sample_period,
            channels: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    /// Single-channel trace.
    pub fn single(sample_period: T, name: &str, values: Vec<T>) -> Result<Self> {
        let mut trace = Self::new(sample_period)?;
        trace.push_channel(name, values)?;
        Ok(trace)
    }

    pub fn push_channel(&mut self, name: &str, values: Vec<T>) -> Result<()> {
        if let Some(first) = self.channels.first() {
            if first.values.len() != values.len() {
                return Err(Error::invalid(format!(
                    "channel `{name}` has {} samples, trace has {}",
                    values.len(),
                    first.values.len()
                )));
            }
        }
        if self.channel(name).is_some() {
            return Err(Error::invalid(format!("duplicate channel `{name}`")));
        }
        self.channels.push(Channel {
            name: name.to_string(),
            values,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Option<&[T]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[T]> {
        self.channel(name)
            .ok_or_else(|| Error::invalid(format!("trace has no channel `{name}`")))
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len()).map(move |k| T::from_usize(k).unwrap() * self.sample_period)
    }
}
