use crate::error::{Error, Result};

/// Planar multichannel real signal.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelAudio {
    pub sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl MultichannelAudio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        let first = channels.first().ok_or(Error::NoChannels)?.len();
        for (i, ch) in channels.iter().enumerate() {
            if ch.len() != first {
                return Err(Error::LengthMismatch {
                    channel: i,
                    expected: first,
                    found: ch.len(),
                });
            }
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; channels.max(1)],
        }
    }

    pub fn from_interleaved(sample_rate: u32, channels: usize, data: &[f64]) -> Result<Self> {
        if channels == 0 {
            return Err(Error::NoChannels);
        }
        if data.len() % channels != 0 {
            return Err(Error::LengthMismatch {
                channel: data.len() % channels,
                expected: data.len() / channels + 1,
                found: data.len() / channels,
            });
        }
        let len = data.len() / channels;
        let mut out = vec![Vec::with_capacity(len); channels];
        for frame in data.chunks_exact(channels) {
            for (ch, &v) in out.iter_mut().zip(frame) {
                ch.push(v);
            }
        }
        Ok(Self {
            sample_rate,
            channels: out,
        })
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.num_channels());
        for i in 0..self.len() {
            for ch in &self.channels {
                out.push(ch[i]);
            }
        }
        out
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn truncate(&mut self, len: usize) {
        for ch in &mut self.channels {
            ch.truncate(len);
        }
    }

    /// Keeps only the listed channels, in order.
    pub fn select_channels(&self, which: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(which.len());
        for &m in which {
            let ch = self.channels.get(m).ok_or(Error::ChannelMismatch {
                expected: m + 1,
                found: self.num_channels(),
            })?;
            out.push(ch.clone());
        }
        Self::new(self.sample_rate, out)
    }

    pub fn energy(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scaled(&self, g: f64) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * g).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .zip(&other.channels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .zip(&other.channels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        })
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.num_channels() != other.num_channels() {
            return Err(Error::ChannelMismatch {
                expected: self.num_channels(),
                found: other.num_channels(),
            });
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                channel: 0,
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }
}
