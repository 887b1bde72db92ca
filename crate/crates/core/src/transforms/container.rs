//! Debug container for [`CoeffFrames`].
//!
//! Layout (little endian): magic `SKCF`, u32 version, u8 kind (0 complex,
//! 1 real), u64 frames, u64 bins, u64 window_len, u64 hop, u64 fft_len,
//! u32 sample rate, u64 original length, then the row-major f64 payload
//! (complex entries as re, im pairs).

use std::io::{Read, Write};

use rustfft::num_complex::Complex;

use super::{CoeffData, CoeffFrames, FrameSpec, TransformError};

const MAGIC: &[u8; 4] = b"SKCF";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> TransformError {
    TransformError::Container(e.to_string())
}

pub fn write_coeffs(coeffs: &CoeffFrames, mut out: impl Write) -> Result<(), TransformError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match coeffs.data {
        CoeffData::Complex(_) => 0,
        CoeffData::Real(_) => 1,
    });
    for v in [
        coeffs.n_frames,
        coeffs.n_bins,
        coeffs.spec.window_len,
        coeffs.spec.hop,
        coeffs.spec.fft_len,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&coeffs.spec.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(coeffs.original_len as u64).to_le_bytes());
    match &coeffs.data {
        CoeffData::Complex(v) => v.iter().for_each(|c| {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }),
        CoeffData::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    out.write_all(&buf).map_err(io_err)
}

pub fn read_coeffs(mut input: impl Read) -> Result<CoeffFrames, TransformError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], TransformError> {
        if cur.len() < n {
            return Err(TransformError::Container("truncated".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(TransformError::Container("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(TransformError::Container(format!("unsupported version {version}")));
    }
    let kind = take(1)?[0];
    let mut u64s = [0usize; 5];
    for v in u64s.iter_mut() {
        *v = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    }
    let [n_frames, n_bins, window_len, hop, fft_len] = u64s;
    let sample_rate_hz = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let original_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let count = n_frames * n_bins;
    let mut f = |n: usize| -> Result<Vec<f64>, TransformError> {
        (0..n)
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect()
    };
    let data = match kind {
        0 => CoeffData::Complex(f(2 * count)?.chunks(2).map(|p| Complex::new(p[0], p[1])).collect()),
        1 => CoeffData::Real(f(count)?),
        k => return Err(TransformError::Container(format!("unknown kind tag {k}"))),
    };
    let spec = FrameSpec::new(window_len, hop, sample_rate_hz)?;
    if spec.fft_len != fft_len {
        return Err(TransformError::Container("fft length disagrees with window".into()));
    }
    Ok(CoeffFrames {
        data,
        n_frames,
        n_bins,
        spec,
        original_len,
    })
}
