//! WAV input and output. Writes 32-bit float; reads float or integer PCM.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelAudio> {
    let reader = WavReader::open(path)?;
    read_from(reader)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<MultichannelAudio> {
    read_from(WavReader::new(std::io::Cursor::new(bytes))?)
}

fn read_from<R: std::io::Read>(mut reader: WavReader<R>) -> Result<MultichannelAudio> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let data: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            // 16-bit maps to exactly 1/32768 per step.
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    MultichannelAudio::from_interleaved(spec.sample_rate, channels, &data)
}

fn float_spec(audio: &MultichannelAudio) -> Result<WavSpec> {
    let channels = u16::try_from(audio.num_channels())
        .map_err(|_| Error::InvalidConfig(format!("{} channels do not fit a WAV file", audio.num_channels())))?;
    Ok(WavSpec {
        channels,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    })
}

pub fn write_wav(path: impl AsRef<Path>, audio: &MultichannelAudio) -> Result<()> {
    let mut w = WavWriter::create(path, float_spec(audio)?)?;
    for v in audio.to_interleaved() {
        w.write_sample(v as f32)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav_bytes(audio: &MultichannelAudio) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut cursor, float_spec(audio)?)?;
        for v in audio.to_interleaved() {
            w.write_sample(v as f32)?;
        }
        w.finalize()?;
    }
    Ok(cursor.into_inner())
}
