use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Gradients, Graph, Result, Tensor, TensorError, Var};

/// Format tag on the first line of every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "csp-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

/// The graph leaves a [`ParamStore`] was bound to for one pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter `{name}`")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Registers every parameter as a gradient-tracking leaf of `g`.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t, true)).collect(),
        }
    }

    /// Adds the gradients reached by a backward pass into each parameter.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for t in &mut self.tensors {
                if let (_, Some(g)) = t.parts_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Replaces values from `other`, which must hold the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other.id(name).map(|id| other.get(id)).ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(TensorError::dim("load_values", t.shape(), src.shape()));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Parameters plus free-form `key value` metadata, persisted as text.
///
/// Layout (one record per line, UTF-8):
///
/// ```text
/// csp-checkpoint v1
/// meta <key> <value to end of line>
/// param <name> <rank> <d1> ... <dn>
/// <v1> <v2> ... <vN>
/// end
/// ```
///
/// Values use Rust's shortest round-trip decimal form, so a write/read
/// cycle is bit-exact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_FORMAT);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in self.params.iter() {
            let _ = write!(out, "param {name} {}", t.shape().len());
            for d in t.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| TensorError::Checkpoint(msg);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, tag)) if tag.trim_end() == CHECKPOINT_FORMAT => {}
            other => return Err(bad(format!("expected `{CHECKPOINT_FORMAT}`, found {:?}", other.map(|l| l.1)))),
        }
        let mut ckpt = Checkpoint::default();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            let lineno = n + 1;
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("param ") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {lineno}: {e}")));
                if fields.len() < 2 {
                    return Err(bad(format!("line {lineno}: truncated param header")));
                }
                let rank = parse_usize(fields[1])?;
                if fields.len() != 2 + rank {
                    return Err(bad(format!("line {lineno}: rank {rank} but {} dims", fields.len() - 2)));
                }
                let shape = fields[2..].iter().map(|s| parse_usize(s)).collect::<Result<Vec<_>>>()?;
                let (_, values) = lines.next().ok_or_else(|| bad(format!("line {lineno}: missing values")))?;
                let data = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1))))
                    .collect::<Result<Vec<_>>>()?;
                ckpt.params.add(fields[0], Tensor::new(&shape, data)?)?;
            } else if line == "end" {
                ended = true;
                break;
            } else if !line.trim().is_empty() {
                return Err(bad(format!("line {lineno}: unexpected record `{line}`")));
            }
        }
        if !ended {
            return Err(bad("missing `end` record".into()));
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn parse_rejects_wrong_tag_and_truncation() {
        assert!(Checkpoint::parse("csp-checkpoint v0\nend\n").is_err());
        assert!(Checkpoint::parse("csp-checkpoint v1\nparam w 1 2\n1 2\n").is_err());
        assert!(Checkpoint::parse("csp-checkpoint v1\nparam w 1 3\n1 2\nend\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 1..20), key in "[a-z]{1,8}") {
            let mut params = ParamStore::new();
            params.add("layer.w", Tensor::vector(values.clone())).unwrap();
            params.add("layer.b", Tensor::new(&[1, values.len()], values.iter().map(|v| v * 1e-7).collect()).unwrap()).unwrap();
            let ckpt = Checkpoint { meta: vec![(key, "a value with spaces".into())], params };
            let back = Checkpoint::parse(&ckpt.to_text()).unwrap();
            prop_assert_eq!(back, ckpt);
        }
    }
}
