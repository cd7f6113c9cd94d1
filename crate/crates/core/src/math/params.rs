use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of one dense layer: `rows` outputs fed by `cols` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Flat parameter storage for a stack of dense layers.
///
/// Each layer occupies a contiguous block: a row-major `rows x cols` weight
/// matrix followed by `rows` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Vec<LayerShape>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(layout: Vec<LayerShape>) -> Self {
        let n = layout.iter().map(LayerShape::param_count).sum();
        Self {
            values: vec![T::zero(); n],
            layout,
        }
    }

    pub fn from_values(layout: Vec<LayerShape>, values: Vec<T>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { values, layout })
    }

    /// A zero vector with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Start offset of layer `l`'s block.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layout[..l].iter().map(LayerShape::param_count).sum()
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let off = self.layer_offset(l);
        let shape = self.layout[l];
        let w_end = off + shape.rows * shape.cols;
        (&self.values[off..w_end], &self.values[w_end..w_end + shape.rows])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// Text form: layout header then one shortest-round-trip decimal per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 64);
        let _ = writeln!(out, "paramvector v1");
        let _ = writeln!(out, "layers {}", self.layout.len());
        for s in &self.layout {
            let _ = writeln!(out, "layer {} {}", s.rows, s.cols);
        }
        let _ = writeln!(out, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        Self::parse_lines(&mut lines)
    }

    pub(crate) fn parse_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(format!("unexpected end of input, wanted {what}")))
        };
        if next("header")? != "paramvector v1" {
            return Err(Error::parse("missing `paramvector v1` header"));
        }
        let n_layers: usize = keyed(next("layers")?, "layers")?;
        let mut layout = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let line = next("layer")?;
            let mut it = line.split_whitespace();
            if it.next() != Some("layer") {
                return Err(Error::parse(format!("expected layer line, got `{line}`")));
            }
            let rows = parse_num(it.next(), line)?;
            let cols = parse_num(it.next(), line)?;
            layout.push(LayerShape { rows, cols });
        }
        let n_values: usize = keyed(next("values")?, "values")?;
        let mut values = Vec::with_capacity(n_values);
        for _ in 0..n_values {
            let line = next("value")?;
            let v = line
                .parse::<T>()
                .map_err(|_| Error::parse(format!("bad value `{line}`")))?;
            values.push(v);
        }
        Self::from_values(layout, values)
    }
}

fn keyed(line: &str, key: &str) -> Result<usize> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::parse(format!("expected `{key}` line, got `{line}`")));
    }
    parse_num(it.next(), line)
}

fn parse_num(tok: Option<&str>, line: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(format!("bad integer in `{line}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Vec<LayerShape> {
        vec![LayerShape { rows: 3, cols: 2 }, LayerShape { rows: 1, cols: 3 }]
    }

    #[test]
    fn count_follows_layout() {
        assert_eq!(ParamVector::<f64>::zeros(layout()).len(), 13);
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(ParamVector::from_values(layout(), vec![0.0_f64; 12]).is_err());
        let mut v = vec![0.0_f64; 13];
        v[4] = f64::NAN;
        assert!(matches!(
            ParamVector::from_values(layout(), v),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn layer_slices() {
        let p = ParamVector::from_values(layout(), (0..13).map(f64::from).collect()).unwrap();
        let (w, b) = p.layer(1);
        assert_eq!(w, &[9.0, 10.0, 11.0]);
        assert_eq!(b, &[12.0]);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(vals in proptest::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 13)) {
            let p = ParamVector::from_values(layout(), vals).unwrap();
            let q = ParamVector::<f64>::from_text(&p.to_text()).unwrap();
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
