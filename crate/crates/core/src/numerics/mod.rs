//! Dense tensors, reverse-mode automatic differentiation, gradient checking,
//! and a first-order optimizer. Everything is 64-bit and CPU-only; supported
//! ranks are 0 (scalar), 1 (vector), and 2 (matrix), row-major.

mod adam;
mod tape;

pub use adam::AdamState;
pub use tape::{check_gradient, eval_scalar, grad, Tape, Var, VarSet};

use crate::error::{Error, Result};

/// Dense row-major tensor of rank 0, 1, or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.len() > 2 {
            return Err(Error::ShapeMismatch(format!(
                "rank {} not supported",
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::ShapeMismatch(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named, ordered collection of tensors. Iteration order is insertion order,
/// so two ParamSets built the same way iterate identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidParam(format!("duplicate parameter `{name}`")));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Merge another set into this one, failing on name collisions.
    pub fn absorb(&mut self, other: ParamSet) -> Result<()> {
        for (name, tensor) in other.entries {
            self.insert(&name, tensor)?;
        }
        Ok(())
    }

    /// True when both sets hold the same names with the same shapes, in the
    /// same order.
    pub fn shapes_mirror(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((an, at), (bn, bt))| an == bn && at.shape() == bt.shape())
    }
}

/// Write a ParamSet as a versioned decimal-text checkpoint. 17 significant
/// digits per value, which round-trips f64 exactly.
pub fn write_checkpoint(params: &ParamSet) -> String {
    let mut out = String::from("glplab-checkpoint v1\n");
    for (name, tensor) in params.iter() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(name);
        out.push(' ');
        out.push_str(&dims.join("x"));
        for v in tensor.data() {
            out.push(' ');
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<ParamSet> {
    let mut lines = text.lines();
    match lines.next() {
        Some("glplab-checkpoint v1") => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "bad header {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut params = ParamSet::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let name = fields
            .next()
            .ok_or_else(|| Error::Checkpoint("missing tensor name".into()))?;
        let dims_str = fields
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing shape for `{name}`")))?;
        let shape: Vec<usize> = if dims_str.is_empty() {
            vec![]
        } else {
            dims_str
                .split('x')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad dim `{d}` for `{name}`")))
                })
                .collect::<Result<_>>()?
        };
        let data: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{name}`")))
            })
            .collect::<Result<_>>()?;
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn tensor_rejects_shape_data_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn paramset_rejects_duplicates_and_keeps_order() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::scalar(1.0)).unwrap();
        p.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(p.insert("b", Tensor::scalar(3.0)).is_err());
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = Rng::new(42);
        let mut p = ParamSet::new();
        p.insert(
            "w0",
            Tensor::matrix(3, 4, (0..12).map(|_| rng.normal() * 1e3).collect()).unwrap(),
        )
        .unwrap();
        p.insert(
            "b0",
            Tensor::vector(vec![1.0 / 3.0, -0.1, f64::MIN_POSITIVE, 2.0f64.powi(-40)]),
        )
        .unwrap();
        p.insert("s", Tensor::scalar(std::f64::consts::PI)).unwrap();
        let text = write_checkpoint(&p);
        let q = read_checkpoint(&text).unwrap();
        assert_eq!(p, q);
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        assert!(read_checkpoint("nope v9\n").is_err());
    }
}
