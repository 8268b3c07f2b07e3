//! Item embeddings split into an original segment (owned by the CTR model)
//! and an auxiliary segment (shared with the capsule network), plus the
//! gradient buffers that keep the two loss sources apart until they are
//! mixed.

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, Rng};
use crate::optim::{Moments, Optimizer};

pub const INIT_RANGE: f64 = 0.05;

fn init_rows(rows: usize, dim: usize, rng: &mut Rng) -> DenseMatrix {
    let data = (0..rows * dim)
        .map(|_| rng.uniform_range(-INIT_RANGE, INIT_RANGE))
        .collect();
    DenseMatrix::from_vec(rows, dim, data).expect("sized")
}

/// Per-item vectors `E = E_original ⊕ E_auxiliary`.
///
/// Row `item_count` is the reserved out-of-vocabulary row; any id at or past
/// it resolves there.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddingTable {
    orig: DenseMatrix,
    aux: DenseMatrix,
}

impl DualEmbeddingTable {
    pub fn new(item_count: usize, d_orig: usize, d_aux: usize, rng: &mut Rng) -> Self {
        let orig = init_rows(item_count + 1, d_orig, rng);
        let aux = init_rows(item_count + 1, d_aux, rng);
        Self { orig, aux }
    }

    /// Builds a table from explicit segments (OOV row included as the last row).
    pub fn from_segments(orig: DenseMatrix, aux: DenseMatrix) -> Result<Self> {
        if orig.rows() != aux.rows() || orig.rows() == 0 {
            return Err(Error::dim("DualEmbeddingTable", orig.shape(), aux.shape()));
        }
        Ok(Self { orig, aux })
    }

    pub fn item_count(&self) -> usize {
        self.orig.rows() - 1
    }

    pub fn oov_index(&self) -> usize {
        self.item_count()
    }

    pub fn rows(&self) -> usize {
        self.orig.rows()
    }

    pub fn d_orig(&self) -> usize {
        self.orig.cols()
    }

    pub fn d_aux(&self) -> usize {
        self.aux.cols()
    }

    pub fn dim(&self) -> usize {
        self.d_orig() + self.d_aux()
    }

    #[inline]
    pub fn resolve(&self, item: usize) -> usize {
        item.min(self.oov_index())
    }

    /// `[orig ∥ aux]` for `item`.
    pub fn lookup(&self, item: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.lookup_into(item, &mut out);
        out
    }

    pub fn lookup_into(&self, item: usize, out: &mut [f64]) {
        let r = self.resolve(item);
        let (o, a) = out.split_at_mut(self.d_orig());
        o.copy_from_slice(self.orig.row(r));
        a.copy_from_slice(self.aux.row(r));
    }

    pub fn lookup_orig(&self, item: usize) -> &[f64] {
        self.orig.row(self.resolve(item))
    }

    /// Auxiliary (interest-space) segment only.
    pub fn lookup_aux(&self, item: usize) -> &[f64] {
        self.aux.row(self.resolve(item))
    }

    pub fn orig(&self) -> &DenseMatrix {
        &self.orig
    }

    pub fn aux(&self) -> &DenseMatrix {
        &self.aux
    }

    pub fn orig_mut(&mut self) -> &mut DenseMatrix {
        &mut self.orig
    }

    pub fn aux_mut(&mut self) -> &mut DenseMatrix {
        &mut self.aux
    }

    /// Both segments at once, original first.
    pub fn segments_mut(&mut self) -> (&mut DenseMatrix, &mut DenseMatrix) {
        (&mut self.orig, &mut self.aux)
    }

    /// Applies one optimizer step to the touched rows only: original rows from
    /// the main-loss gradient, auxiliary rows from the mixed gradient.
    pub fn apply_sparse_update(
        &mut self,
        grads: &GradientBuffers,
        state: &mut DualMoments,
        opt: &Optimizer,
    ) -> Result<()> {
        let mixed = grads
            .mixed
            .as_ref()
            .ok_or_else(|| Error::Sequencing("auxiliary gradients must be mixed before the update".into()))?;
        update_rows(&mut self.orig, &grads.orig, &mut state.orig, opt);
        update_rows(&mut self.aux, mixed, &mut state.aux, opt);
        Ok(())
    }
}

fn update_rows(table: &mut DenseMatrix, grads: &RowGradients, state: &mut Moments, opt: &Optimizer) {
    let dim = table.cols();
    for row in grads.touched() {
        let g = grads.row(row).expect("touched");
        // An identically zero gradient leaves the row alone, as if untouched,
        // so Adam momentum does not drift rows that nothing pushed this step.
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let span = row * dim..(row + 1) * dim;
        opt.update(
            table.row_mut(row),
            g,
            &mut state.m[span.clone()],
            &mut state.v[span],
        );
    }
}

/// Dense row-gradient storage that remembers which rows were written.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradients {
    dim: usize,
    data: Vec<f64>,
    is_touched: Vec<bool>,
    touched: Vec<usize>,
}

impl RowGradients {
    pub fn new(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; rows * dim],
            is_touched: vec![false; rows],
            touched: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, row: usize, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.dim);
        if !self.is_touched[row] {
            self.is_touched[row] = true;
            self.touched.push(row);
        }
        let dst = &mut self.data[row * self.dim..(row + 1) * self.dim];
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
    }

    /// Gradient of `row`, or `None` if no backward pass wrote to it.
    pub fn row(&self, row: usize) -> Option<&[f64]> {
        self.is_touched[row].then(|| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Touched rows in ascending order.
    pub fn touched(&self) -> Vec<usize> {
        let mut t = self.touched.clone();
        t.sort_unstable();
        t
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    /// True when every stored entry is exactly zero.
    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.data[r * self.dim..(r + 1) * self.dim].fill(0.0);
            self.is_touched[r] = false;
        }
        self.touched.clear();
    }
}

/// Gradient accumulators for one [`DualEmbeddingTable`].
///
/// The auxiliary segment keeps its two sources apart:
/// `aux_from_auxiliary` holds ∂(λ·L_IaCN)/∂E_aux and `aux_from_main` holds
/// ∂L_main/∂E_aux. The mixed buffer is produced only by [`Self::mix`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers {
    orig: RowGradients,
    aux_from_auxiliary: RowGradients,
    aux_from_main: RowGradients,
    mixed: Option<RowGradients>,
}

impl GradientBuffers {
    pub fn for_table(table: &DualEmbeddingTable) -> Self {
        let rows = table.rows();
        Self {
            orig: RowGradients::new(rows, table.d_orig()),
            aux_from_auxiliary: RowGradients::new(rows, table.d_aux()),
            aux_from_main: RowGradients::new(rows, table.d_aux()),
            mixed: None,
        }
    }

    pub fn zero(&mut self) {
        self.orig.clear();
        self.aux_from_auxiliary.clear();
        self.aux_from_main.clear();
        self.mixed = None;
    }

    /// Main-loss gradient for a full `[orig ∥ aux]` row.
    pub fn add_main(&mut self, row: usize, grad: &[f64]) {
        let (o, a) = grad.split_at(self.orig.dim());
        self.orig.add(row, o);
        self.aux_from_main.add(row, a);
    }

    /// Auxiliary-loss gradient for the auxiliary segment of `row`.
    pub fn add_auxiliary(&mut self, row: usize, grad: &[f64]) {
        self.aux_from_auxiliary.add(row, grad);
    }

    pub fn orig(&self) -> &RowGradients {
        &self.orig
    }

    pub fn aux_from_auxiliary(&self) -> &RowGradients {
        &self.aux_from_auxiliary
    }

    pub fn aux_from_main(&self) -> &RowGradients {
        &self.aux_from_main
    }

    pub fn mixed(&self) -> Option<&RowGradients> {
        self.mixed.as_ref()
    }

    /// Drops the main-loss contribution to the auxiliary segment.
    pub fn discard_aux_from_main(&mut self) {
        self.aux_from_main.clear();
    }

    /// Drops the auxiliary-loss contribution to the auxiliary segment.
    pub fn discard_aux_from_auxiliary(&mut self) {
        self.aux_from_auxiliary.clear();
    }

    /// Fills the mixed buffer with `(1−δ)·g_aa + δ·g_am` over every row
    /// touched by either source.
    pub fn mix(&mut self, delta: f64) -> Result<()> {
        check_delta(delta)?;
        let dim = self.aux_from_main.dim();
        let zero = vec![0.0; dim];
        let mut rows = self.aux_from_auxiliary.touched();
        rows.extend(self.aux_from_main.touched());
        rows.sort_unstable();
        rows.dedup();
        let mut mixed = RowGradients::new(self.aux_from_main.is_touched.len(), dim);
        for row in rows {
            let g_aa = self.aux_from_auxiliary.row(row).unwrap_or(&zero);
            let g_am = self.aux_from_main.row(row).unwrap_or(&zero);
            mixed.add(row, &mix_auxiliary_gradient(g_aa, g_am, delta)?);
        }
        self.mixed = Some(mixed);
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("delta {delta} outside [0, 1]")));
    }
    Ok(())
}

/// `(1−δ)·g_aa + δ·g_am`, elementwise.
pub fn mix_auxiliary_gradient(g_aa: &[f64], g_am: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    if g_aa.len() != g_am.len() {
        return Err(Error::dim(
            "mix_auxiliary_gradient",
            (g_aa.len(), 1),
            (g_am.len(), 1),
        ));
    }
    Ok(g_aa
        .iter()
        .zip(g_am)
        .map(|(&a, &m)| (1.0 - delta) * a + delta * m)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualMoments {
    pub orig: Moments,
    pub aux: Moments,
}

impl DualMoments {
    pub fn for_table(table: &DualEmbeddingTable) -> Self {
        Self {
            orig: Moments::zeros(table.orig.as_slice().len()),
            aux: Moments::zeros(table.aux.as_slice().len()),
        }
    }
}

/// Single-segment table (user profiles, per-item wide weights).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new(count: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            rows: init_rows(count + 1, dim, rng),
        }
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        Self {
            rows: DenseMatrix::zeros(count + 1, dim),
        }
    }

    pub fn from_matrix(rows: DenseMatrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Config("embedding table needs an OOV row".into()));
        }
        Ok(Self { rows })
    }

    pub fn oov_index(&self) -> usize {
        self.rows.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn resolve(&self, id: usize) -> usize {
        id.min(self.oov_index())
    }

    pub fn lookup(&self, id: usize) -> &[f64] {
        self.rows.row(self.resolve(id))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.rows
    }

    pub fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.rows
    }

    pub fn new_gradients(&self) -> RowGradients {
        RowGradients::new(self.rows.rows(), self.dim())
    }

    pub fn new_moments(&self) -> Moments {
        Moments::zeros(self.rows.as_slice().len())
    }

    pub fn apply_sparse_update(&mut self, grads: &RowGradients, state: &mut Moments, opt: &Optimizer) {
        update_rows(&mut self.rows, grads, state, opt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn table_with(orig: &[f64], aux: &[f64]) -> DualEmbeddingTable {
        let o = DenseMatrix::from_rows(&[orig.to_vec(), vec![0.0; orig.len()]]).unwrap();
        let a = DenseMatrix::from_rows(&[aux.to_vec(), vec![0.0; aux.len()]]).unwrap();
        DualEmbeddingTable::from_segments(o, a).unwrap()
    }

    #[test]
    fn lookup_concatenates() {
        let t = table_with(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(t.lookup(0), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.lookup_aux(0), &[3.0, 4.0]);
        let mut joined = t.lookup_orig(0).to_vec();
        joined.extend_from_slice(t.lookup_aux(0));
        assert_eq!(joined, t.lookup(0));
        assert_eq!(t.lookup(0), t.lookup(0));
    }

    #[test]
    fn default_dims_and_oov() {
        let t = DualEmbeddingTable::new(10, 16, 16, &mut Rng::new(0));
        assert_eq!(t.lookup(3).len(), 32);
        assert_eq!(t.oov_index(), 10);
        assert_eq!(t.lookup(10_000), t.lookup(10));
        assert!(t
            .orig()
            .as_slice()
            .iter()
            .chain(t.aux().as_slice())
            .all(|x| x.abs() <= INIT_RANGE));
    }

    #[test]
    fn mismatched_segments_rejected() {
        let o = DenseMatrix::zeros(3, 2);
        let a = DenseMatrix::zeros(4, 2);
        assert!(DualEmbeddingTable::from_segments(o, a).is_err());
    }

    #[test]
    fn mixing_endpoints_and_default() {
        let g_aa = [1.0, -2.0];
        let g_am = [2.0, 5.0];
        assert_eq!(mix_auxiliary_gradient(&g_aa, &g_am, 0.0).unwrap(), g_aa.to_vec());
        assert_eq!(mix_auxiliary_gradient(&g_aa, &g_am, 1.0).unwrap(), g_am.to_vec());
        let mid = mix_auxiliary_gradient(&[1.0], &[2.0], 0.3).unwrap();
        assert!((mid[0] - 1.3).abs() < 1e-15);
        assert!(matches!(
            mix_auxiliary_gradient(&g_aa, &g_am, 1.5),
            Err(Error::Config(_))
        ));
        assert!(mix_auxiliary_gradient(&g_aa, &g_am, -0.1).is_err());
    }

    #[test]
    fn update_before_mix_is_sequencing_error() {
        let mut t = table_with(&[1.0, 2.0], &[3.0, 4.0]);
        let mut g = GradientBuffers::for_table(&t);
        g.add_main(0, &[1.0, 1.0, 1.0, 1.0]);
        let mut st = DualMoments::for_table(&t);
        let opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        assert!(matches!(
            t.apply_sparse_update(&g, &mut st, &opt),
            Err(Error::Sequencing(_))
        ));
    }

    #[test]
    fn sgd_touches_only_touched_rows() {
        let o = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![5.0, 5.0], vec![0.0, 0.0]]).unwrap();
        let a = DenseMatrix::from_rows(&[vec![2.0, 2.0], vec![6.0, 6.0], vec![0.0, 0.0]]).unwrap();
        let mut t = DualEmbeddingTable::from_segments(o, a).unwrap();
        let before = t.clone();
        let mut g = GradientBuffers::for_table(&t);
        g.add_main(0, &[1.0, 1.0, 1.0, 1.0]);
        g.mix(1.0).unwrap();
        let mut st = DualMoments::for_table(&t);
        let opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        t.apply_sparse_update(&g, &mut st, &opt).unwrap();
        let (o, a) = (1.0 - 0.1 * 1.0, 2.0 - 0.1 * 1.0);
        assert_eq!(t.lookup_orig(0), &[o, o]);
        assert_eq!(t.lookup_aux(0), &[a, a]);
        for (x, y) in t.lookup(1).iter().zip(before.lookup(1)) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn adam_zero_gradients_leave_table() {
        let mut t = DualEmbeddingTable::new(4, 3, 2, &mut Rng::new(9));
        let before = t.clone();
        let mut g = GradientBuffers::for_table(&t);
        g.add_main(1, &[0.0; 5]);
        g.add_auxiliary(2, &[0.0; 2]);
        g.mix(0.3).unwrap();
        let mut st = DualMoments::for_table(&t);
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), 1e-4);
        opt.begin_step();
        t.apply_sparse_update(&g, &mut st, &opt).unwrap();
        assert_eq!(t, before);
    }

    #[test]
    fn sources_stay_separate() {
        let t = DualEmbeddingTable::new(3, 2, 2, &mut Rng::new(1));
        let mut g = GradientBuffers::for_table(&t);
        g.add_auxiliary(1, &[0.5, 0.25]);
        assert!(g.aux_from_main().is_empty() && g.orig().is_empty());
        g.add_main(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.orig().row(2), Some(&[1.0, 2.0][..]));
        assert_eq!(g.aux_from_main().row(2), Some(&[3.0, 4.0][..]));
        assert_eq!(g.aux_from_auxiliary().row(2), None);
        g.mix(0.5).unwrap();
        let mixed = g.mixed().unwrap();
        assert_eq!(mixed.touched(), vec![1, 2]);
        assert_eq!(mixed.row(1), Some(&[0.25, 0.125][..]));
        assert_eq!(mixed.row(2), Some(&[1.5, 2.0][..]));
        g.zero();
        assert!(g.mixed().is_none());
        assert!(g.orig().is_all_zero() && g.aux_from_main().is_empty());
    }

    proptest! {
        #[test]
        fn mixing_is_linear(
            a in prop::collection::vec(-10.0f64..10.0, 4),
            b in prop::collection::vec(-10.0f64..10.0, 4),
            c in prop::collection::vec(-10.0f64..10.0, 4),
            s in -3.0f64..3.0,
            delta in 0.0f64..=1.0,
        ) {
            // mix(a + s·c, b) = mix(a, b) + s·mix(c, 0)
            let ac: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + s * y).collect();
            let lhs = mix_auxiliary_gradient(&ac, &b, delta).unwrap();
            let m_ab = mix_auxiliary_gradient(&a, &b, delta).unwrap();
            let m_c0 = mix_auxiliary_gradient(&c, &[0.0; 4], delta).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - (m_ab[i] + s * m_c0[i])).abs() < 1e-9);
            }
            // and in the second argument
            let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + s * y).collect();
            let lhs = mix_auxiliary_gradient(&a, &bc, delta).unwrap();
            let m_0c = mix_auxiliary_gradient(&[0.0; 4], &c, delta).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - (m_ab[i] + s * m_0c[i])).abs() < 1e-9);
            }
        }
    }
}
