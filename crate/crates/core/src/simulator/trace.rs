//! Versioned binary scene trace for replaying a stream.
//!
//! Layout, little-endian: magic `CTATRACE`, `u32` version, `u32` width, then
//! records of `u64` step, `u32` scene index, `u32` object count, `d` × `f64`
//! image feature, and per object a `u32` class followed by `d` × `f64`.

use std::io::{self, Read, Write};

use crate::error::{CtaError, Result};
use crate::numerics::DenseVector;
use crate::simulator::{Scene, SceneObject};

pub const TRACE_MAGIC: &[u8; 8] = b"CTATRACE";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub scene_index: u32,
    pub scene: Scene,
}

pub struct TraceWriter<W: Write> {
    out: W,
    dim: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, dim: usize) -> io::Result<Self> {
        out.write_all(TRACE_MAGIC)?;
        out.write_all(&TRACE_VERSION.to_le_bytes())?;
        out.write_all(&(dim as u32).to_le_bytes())?;
        Ok(Self { out, dim })
    }

    pub fn write(&mut self, step: u64, scene_index: u32, scene: &Scene) -> io::Result<()> {
        if scene.image_feature.len() != self.dim
            || scene.objects.iter().any(|o| o.feature.len() != self.dim)
        {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "feature width mismatch",
            ));
        }
        self.out.write_all(&step.to_le_bytes())?;
        self.out.write_all(&scene_index.to_le_bytes())?;
        self.out
            .write_all(&(scene.objects.len() as u32).to_le_bytes())?;
        write_floats(&mut self.out, scene.image_feature.as_slice())?;
        for o in &scene.objects {
            self.out.write_all(&(o.true_class as u32).to_le_bytes())?;
            write_floats(&mut self.out, o.feature.as_slice())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_floats<W: Write>(out: &mut W, xs: &[f64]) -> io::Result<()> {
    for x in xs {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_floats<R: Read>(r: &mut R, n: usize) -> Result<DenseVector<f64>> {
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(f64::from_le_bytes(read_array(r).map_err(truncated)?));
    }
    DenseVector::new(v)
}

fn truncated(e: io::Error) -> CtaError {
    CtaError::Parse(format!("truncated trace: {e}"))
}

/// Reads a whole trace; returns the width and the records.
pub fn read_trace<R: Read>(mut r: R) -> Result<(usize, Vec<TraceRecord>)> {
    let magic: [u8; 8] = read_array(&mut r).map_err(truncated)?;
    if &magic != TRACE_MAGIC {
        return Err(CtaError::Parse("not a scene trace".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r).map_err(truncated)?);
    if version != TRACE_VERSION {
        return Err(CtaError::Parse(format!(
            "unsupported trace version {version}"
        )));
    }
    let dim = u32::from_le_bytes(read_array(&mut r).map_err(truncated)?) as usize;
    let mut records = Vec::new();
    loop {
        let mut first = [0u8; 8];
        match r.read(&mut first[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(truncated(e)),
        }
        r.read_exact(&mut first[1..]).map_err(truncated)?;
        let step = u64::from_le_bytes(first);
        let scene_index = u32::from_le_bytes(read_array(&mut r).map_err(truncated)?);
        let n = u32::from_le_bytes(read_array(&mut r).map_err(truncated)?) as usize;
        let image_feature = read_floats(&mut r, dim)?;
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let true_class = u32::from_le_bytes(read_array(&mut r).map_err(truncated)?) as usize;
            objects.push(SceneObject {
                feature: read_floats(&mut r, dim)?,
                true_class,
            });
        }
        records.push(TraceRecord {
            step,
            scene_index,
            scene: Scene {
                image_feature,
                objects,
            },
        });
    }
    Ok((dim, records))
}
