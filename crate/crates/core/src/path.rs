//! State sequences and lightweight views over them.
//!
//! Model states are flat `f64` slices of a fixed dimension. A [`Trajectory`]
//! stores a whole sequence contiguously; [`Path`] is the read-only view that
//! targets evaluate, so that particle lineages and spliced reference paths can
//! be handed to a target without copying.

/// Read-only sequence of states, indexed from 0.
pub trait Path {
    fn len(&self) -> usize;

    fn state(&self, s: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn last(&self) -> Option<&[f64]> {
        if self.is_empty() {
            None
        } else {
            Some(self.state(self.len() - 1))
        }
    }
}

/// Contiguous time-major state sequence (also used for observation sequences).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * len],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(
            dim > 0 && data.len().is_multiple_of(dim),
            "flat data is not a multiple of dim"
        );
        Self { dim, data }
    }

    pub fn from_states(states: &[Vec<f64>]) -> Self {
        let dim = states.first().map_or(1, |s| s.len());
        let mut data = Vec::with_capacity(dim * states.len());
        for s in states {
            assert_eq!(s.len(), dim, "ragged states");
            data.extend_from_slice(s);
        }
        Self { dim, data }
    }

    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// States `start..start + count` as one flat slice.
    pub fn window(&self, start: usize, count: usize) -> &[f64] {
        &self.data[start * self.dim..(start + count) * self.dim]
    }

    pub fn window_mut(&mut self, start: usize, count: usize) -> &mut [f64] {
        &mut self.data[start * self.dim..(start + count) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, state: &[f64]) {
        assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state);
    }

    /// Component `c` of every state.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.state(t)[c]).collect()
    }
}

impl Path for Trajectory {
    fn len(&self) -> usize {
        Trajectory::len(self)
    }

    fn state(&self, s: usize) -> &[f64] {
        Trajectory::state(self, s)
    }
}

/// The empty path (no states).
pub struct EmptyPath;

impl Path for EmptyPath {
    fn len(&self) -> usize {
        0
    }

    fn state(&self, s: usize) -> &[f64] {
        panic!("empty path has no state {s}")
    }
}

/// Suffix view: state `k` is time `start + k` of the underlying path, with the
/// first `window.len() / dim` states taken from an override buffer.
pub struct FuturePath<'a> {
    window: &'a [f64],
    dim: usize,
    tail: &'a Trajectory,
    start: usize,
}

impl<'a> FuturePath<'a> {
    pub fn new(window: &'a [f64], tail: &'a Trajectory, start: usize) -> Self {
        let dim = tail.dim();
        debug_assert_eq!(window.len() % dim, 0);
        Self {
            window,
            dim,
            tail,
            start,
        }
    }

    /// Number of leading states supplied by the override buffer.
    pub fn window_len(&self) -> usize {
        self.window.len() / self.dim
    }
}

impl Path for FuturePath<'_> {
    fn len(&self) -> usize {
        self.tail.len() - self.start
    }

    fn state(&self, k: usize) -> &[f64] {
        if k < self.window_len() {
            &self.window[k * self.dim..(k + 1) * self.dim]
        } else {
            self.tail.state(self.start + k)
        }
    }
}

/// Concatenation `head ∪ tail`.
pub struct Concat<'a> {
    pub head: &'a dyn Path,
    pub tail: &'a dyn Path,
}

impl Path for Concat<'_> {
    fn len(&self) -> usize {
        self.head.len() + self.tail.len()
    }

    fn state(&self, s: usize) -> &[f64] {
        let h = self.head.len();
        if s < h {
            self.head.state(s)
        } else {
            self.tail.state(s - h)
        }
    }
}

/// Copy any path into an owned trajectory.
pub fn to_trajectory(path: &dyn Path, dim: usize) -> Trajectory {
    let mut out = Trajectory::zeros(dim, 0);
    for s in 0..path.len() {
        out.push(path.state(s));
    }
    out
}
