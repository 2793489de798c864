use super::{Gradients, Model};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter table with a step count per row, so
/// bias correction stays right for rows that are updated sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamTable<T> {
    pub cols: usize,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: Vec<u32>,
}

impl<T: Real> AdamTable<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamTable {
            cols,
            m: vec![T::zero(); rows * cols],
            v: vec![T::zero(); rows * cols],
            steps: vec![0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.steps.len()
    }

    /// Updates one row in place. Returns false, touching nothing, when the
    /// gradient is identically zero.
    pub fn step_row(&mut self, row: usize, param: &mut [T], grad: &[T], hp: &AdamHyper) -> bool {
        if grad.iter().all(|g| g.is_zero()) {
            return false;
        }
        let c = self.cols;
        self.steps[row] += 1;
        let t = self.steps[row] as i32;
        let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
        let bc1 = T::one() - T::of(hp.beta1.powi(t));
        let bc2 = T::one() - T::of(hp.beta2.powi(t));
        let (lr, eps) = (T::of(hp.lr), T::of(hp.eps));
        let m = &mut self.m[row * c..(row + 1) * c];
        let v = &mut self.v[row * c..(row + 1) * c];
        for j in 0..c {
            let g = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            param[j] -= lr * mh / (vh.sqrt() + eps);
        }
        true
    }
}

/// One `AdamTable` per entry of `Model::table_shapes`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub tables: Vec<AdamTable<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        AdamState {
            tables: model
                .table_shapes()
                .into_iter()
                .map(|(_, r, c)| AdamTable::new(r, c))
                .collect(),
        }
    }
}

/// Applies one sparse Adam update. Returns the number of rows changed.
pub fn adam_step<T: Real>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> usize {
    let pad_row = model.encoder.as_ref().map(|e| e.pad_row());
    let has_entity = model.entity.is_some();
    let mut tables = model.tables_mut().into_iter();
    let mut states = state.tables.iter_mut();
    let mut updated = 0;

    fn sparse<'g, T: Real>(
        param: &mut [T],
        st: &mut AdamTable<T>,
        rows: impl Iterator<Item = (&'g u32, &'g Vec<T>)>,
        hp: &AdamHyper,
    ) -> usize {
        let c = st.cols;
        rows.filter(|(&r, g)| {
            let r = r as usize;
            st.step_row(r, &mut param[r * c..(r + 1) * c], g, hp)
        })
        .count()
    }

    if has_entity {
        let (p, s) = (tables.next().unwrap(), states.next().unwrap());
        updated += sparse(p, s, grads.entity_rows.iter(), hp);
    }
    let (p, s) = (tables.next().unwrap(), states.next().unwrap());
    updated += sparse(p, s, grads.relation_rows.iter(), hp);

    if let Some(eg) = &grads.encoder {
        let (p, s) = (tables.next().unwrap(), states.next().unwrap());
        let pad = pad_row.map(|r| r as u32);
        updated += sparse(p, s, eg.token_rows.iter().filter(|(r, _)| Some(**r) != pad), hp);
        for (g, (p, s)) in eg.dense.dense_tensors().into_iter().zip(tables.zip(states)) {
            if s.step_row(0, p, g, hp) {
                updated += 1;
            }
        }
    }
    updated
}
