//! `ctastats v1` text container.
//!
//! ```text
//! ctastats v1 d=<d> k=<classes> [key=value ...]
//! <tag> <v1> <v2> ...
//! ```
//!
//! One whitespace-separated line per statistic vector, each led by a tag.
//! Floats are written in shortest round-trip form, so write → read is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CtaError, Result};
use crate::numerics::DenseVector;
use crate::scalar::Scalar;
use crate::stats::GaussianStats;

pub const MAGIC: &str = "ctastats";
pub const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dim: usize,
    pub classes: usize,
    pub attrs: Vec<(String, String)>,
    pub records: Vec<(String, Vec<String>)>,
}

impl Container {
    pub fn new(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            attrs: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn attr(mut self, key: &str, value: impl ToString) -> Self {
        self.attrs.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push<V: ToString>(
        &mut self,
        tag: impl Into<String>,
        values: impl IntoIterator<Item = V>,
    ) {
        self.records.push((
            tag.into(),
            values.into_iter().map(|v| v.to_string()).collect(),
        ));
    }

    pub fn get_attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn record(&self, tag: &str) -> Result<&[String]> {
        self.records
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| CtaError::Parse(format!("missing record `{tag}`")))
    }

    pub fn parse_record<T: std::str::FromStr>(&self, tag: &str) -> Result<Vec<T>> {
        self.record(tag)?
            .iter()
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| CtaError::Parse(format!("record `{tag}`: bad value `{s}`")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION} d={} k={}", self.dim, self.classes);
        for (k, v) in &self.attrs {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
        for (tag, values) in &self.records {
            out.push_str(tag);
            for v in values {
                out.push(' ');
                out.push_str(v);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CtaError::Parse("empty container".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(CtaError::Parse(format!("bad magic in header `{header}`")));
        }
        match parts.next() {
            Some(VERSION) => {}
            other => {
                return Err(CtaError::Parse(format!(
                    "unsupported version {}",
                    other.unwrap_or("<none>")
                )))
            }
        }
        let mut dim = None;
        let mut classes = None;
        let mut attrs = Vec::new();
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CtaError::Parse(format!("bad header field `{kv}`")))?;
            let as_usize = || {
                v.parse::<usize>()
                    .map_err(|_| CtaError::Parse(format!("bad header value `{kv}`")))
            };
            match k {
                "d" => dim = Some(as_usize()?),
                "k" => classes = Some(as_usize()?),
                _ => attrs.push((k.to_string(), v.to_string())),
            }
        }
        let dim = dim.ok_or_else(|| CtaError::Parse("header lacks d=".into()))?;
        let classes = classes.ok_or_else(|| CtaError::Parse("header lacks k=".into()))?;
        let records = lines
            .map(|line| {
                let mut it = line.split_whitespace();
                let tag = it.next().unwrap_or_default().to_string();
                (tag, it.map(str::to_string).collect())
            })
            .collect();
        Ok(Self {
            dim,
            classes,
            attrs,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CtaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtaError::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Precomputed source-domain statistics: one image-level block, one block per
/// foreground class, and the in-domain gap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStats<T: Scalar> {
    pub image: GaussianStats<T>,
    pub classes: Vec<GaussianStats<T>>,
    pub d_kl_in: T,
}

impl<T: Scalar> ReferenceStats<T> {
    pub fn dim(&self) -> usize {
        self.image.dim()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(self.dim(), self.classes.len());
        push_stats(&mut c, "image", &self.image);
        for (k, s) in self.classes.iter().enumerate() {
            push_stats(&mut c, &format!("class.{k}"), s);
        }
        c.push("d_kl_in", [self.d_kl_in]);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let image = read_stats(c, "image", c.dim)?;
        let classes = (0..c.classes)
            .map(|k| read_stats(c, &format!("class.{k}"), c.dim))
            .collect::<Result<Vec<_>>>()?;
        let d_kl_in = single::<T>(c, "d_kl_in")?;
        if !(d_kl_in > T::zero()) {
            return Err(CtaError::Parse(format!(
                "d_kl_in must be positive, got {d_kl_in}"
            )));
        }
        Ok(Self {
            image,
            classes,
            d_kl_in,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn push_stats<T: Scalar>(c: &mut Container, prefix: &str, s: &GaussianStats<T>) {
    c.push(format!("{prefix}.count"), [s.count()]);
    c.push(format!("{prefix}.mean"), s.mean().iter());
    c.push(format!("{prefix}.var"), s.var().iter());
}

fn read_stats<T: Scalar>(c: &Container, prefix: &str, dim: usize) -> Result<GaussianStats<T>> {
    let count = single::<u64>(c, &format!("{prefix}.count"))?;
    let mean = read_vector::<T>(c, &format!("{prefix}.mean"), dim)?;
    let var = read_vector::<T>(c, &format!("{prefix}.var"), dim)?;
    GaussianStats::new(mean, var, count)
}

pub(crate) fn read_vector<T: Scalar>(
    c: &Container,
    tag: &str,
    len: usize,
) -> Result<DenseVector<T>> {
    let values = c.parse_record::<T>(tag)?;
    if values.len() != len {
        return Err(CtaError::Parse(format!(
            "record `{tag}` has {} values, expected {len}",
            values.len()
        )));
    }
    DenseVector::new(values)
}

pub(crate) fn single<T: std::str::FromStr>(c: &Container, tag: &str) -> Result<T> {
    let mut v = c.parse_record::<T>(tag)?;
    if v.len() != 1 {
        return Err(CtaError::Parse(format!(
            "record `{tag}` must hold one value"
        )));
    }
    Ok(v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ReferenceStats<f64> {
        let s = |m: f64| {
            GaussianStats::new(
                DenseVector::new(vec![m, 0.1 + m]).unwrap(),
                DenseVector::new(vec![1.0 / 3.0, 2.5]).unwrap(),
                2000,
            )
            .unwrap()
        };
        ReferenceStats {
            image: s(0.0),
            classes: vec![s(1.0), s(-2.0), s(std::f64::consts::PI)],
            d_kl_in: 0.0321,
        }
    }

    #[test]
    fn header_format() {
        let text = sample().to_container().to_text();
        assert_eq!(text.lines().next().unwrap(), "ctastats v1 d=2 k=3");
        assert_eq!(text.lines().filter(|l| l.starts_with("class.")).count(), 9);
        assert!(text.lines().last().unwrap().starts_with("d_kl_in "));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let r = sample();
        let back = ReferenceStats::<f64>::from_container(
            &Container::from_text(&r.to_container().to_text()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(Container::from_text("ctastats v2 d=2 k=0\n").is_err());
        assert!(Container::from_text("nope v1 d=2 k=0\n").is_err());
        assert!(Container::from_text("ctastats v1 k=0\n").is_err());
        assert!(Container::from_text("").is_err());
    }

    #[test]
    fn rejects_truncated_vector() {
        let mut text = sample().to_container().to_text();
        text = text.replace(
            "image.var 0.3333333333333333 2.5",
            "image.var 0.3333333333333333",
        );
        let c = Container::from_text(&text).unwrap();
        assert!(ReferenceStats::<f64>::from_container(&c).is_err());
    }
}
