//! Named parameter tensors.
//!
//! Every trainable container exposes its tensors in a fixed order under
//! stable names. The optimizer, the gradient checker and the checkpoint
//! format all rely on that order.

/// Shape and contents of one named tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub trait NamedTensors {
    fn tensors(&self) -> Vec<TensorView<'_>>;

    /// Same order and names as [`NamedTensors::tensors`].
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    /// A value of identical shape with every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Inverse of [`NamedTensors::flatten`]. Panics on length mismatch.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, dst) in self.tensors_mut() {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Name of the tensor holding flat index `idx`, with the in-tensor offset.
    fn locate(&self, mut idx: usize) -> Option<(String, usize)> {
        for t in self.tensors() {
            if idx < t.data.len() {
                return Some((t.name, idx));
            }
            idx -= t.data.len();
        }
        None
    }

    /// `self += other` entrywise.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for (_, dst) in self.tensors_mut() {
            dst.iter_mut().for_each(|d| *d *= k);
        }
    }
}

/// Bare vector of parameters, named `p`. Handy for optimizer tests and
/// small experiments.
impl NamedTensors for Vec<f64> {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![TensorView {
            name: "p".into(),
            shape: vec![self.len()],
            data: self,
        }]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("p".into(), self.as_mut_slice())]
    }

    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, views: Vec<TensorView<'a>>) -> impl Iterator<Item = TensorView<'a>> + use<'a> {
    let prefix = prefix.to_string();
    views.into_iter().map(move |mut v| {
        v.name = format!("{prefix}.{}", v.name);
        v
    })
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    views: Vec<(String, &'a mut [f64])>,
) -> impl Iterator<Item = (String, &'a mut [f64])> + use<'a> {
    let prefix = prefix.to_string();
    views.into_iter().map(move |(n, d)| (format!("{prefix}.{n}"), d))
}
