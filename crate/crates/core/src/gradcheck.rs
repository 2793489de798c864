//! Central finite-difference checks of analytic gradients.
//!
//! The residual formulas here are written out independently of the kernels;
//! they serve as a recompute oracle and to detect L1 kinks, where the
//! difference quotient is meaningless.

use rand::Rng;
use serde::Serialize;

use crate::anchors::{AnchorSet, SubgraphTokens, TokenConfig, PAD};
use crate::encoder::{
    encode_backward, encode_entity, transformer_block, transformer_block_backward, BlockWeights, Combiner,
    EncoderConfig, EncoderGrads, EncoderWeights, Mat,
};
use crate::scoring::{evaluate, ModelKind, Norm, ScoreInputs};

pub const FD_STEP: f64 = 1e-5;
pub const KINK_EPS: f64 = 1e-6;
pub const KERNEL_TOL: f64 = 1e-4;
pub const BLOCK_TOL: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub target: String,
    pub instances: usize,
    pub skipped_kinks: usize,
    pub components: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Owned random inputs for one kernel instance.
#[derive(Clone, Debug)]
pub struct KernelInstance {
    pub kind: ModelKind,
    pub norm: Norm,
    pub u: f64,
    /// head, tail, head_aux, tail_aux, rel, rel_head, rel_tail
    pub parts: [Vec<f64>; 7],
}

pub const PART_NAMES: [&str; 7] = ["head", "tail", "head_aux", "tail_aux", "rel", "rel_head", "rel_tail"];

impl KernelInstance {
    pub fn random<R: Rng>(kind: ModelKind, dim: usize, norm: Norm, rng: &mut R) -> Self {
        let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let aux = if kind.uses_entity_aux() { dim } else { 0 };
        let rel = match kind {
            ModelKind::RotatE => dim / 2,
            ModelKind::PairRE => 0,
            _ => dim,
        };
        let pair = if kind.uses_relation_pair() { dim } else { 0 };
        let parts = [v(dim), v(dim), v(aux), v(aux), v(rel), v(pair), v(pair)];
        let u = match kind {
            ModelKind::InterHTPlus | ModelKind::TripleReV2 => rng.gen_range(0.0..1.0),
            _ => 0.0,
        };
        KernelInstance { kind, norm, u, parts }
    }

    pub fn inputs(&self) -> ScoreInputs<'_, f64> {
        let p = &self.parts;
        ScoreInputs {
            head: &p[0],
            tail: &p[1],
            head_aux: &p[2],
            tail_aux: &p[3],
            rel: &p[4],
            rel_head: &p[5],
            rel_tail: &p[6],
            u: self.u,
            norm: self.norm,
        }
    }
}

/// Residual components (complex moduli for RotatE), or `None` for bilinear models.
pub fn residual_oracle(inst: &KernelInstance) -> Option<Vec<f64>> {
    let [h, t, ha, ta, r, rh, rt] = &inst.parts;
    let d = h.len();
    let u = inst.u;
    let res: Vec<f64> = match inst.kind {
        ModelKind::TransE => (0..d).map(|i| h[i] + r[i] - t[i]).collect(),
        ModelKind::PairRE => (0..d).map(|i| h[i] * rh[i] - t[i] * rt[i]).collect(),
        ModelKind::TripleReV1 => (0..d).map(|i| h[i] * rh[i] - t[i] * rt[i] + r[i]).collect(),
        ModelKind::TripleReV2 => (0..d).map(|i| h[i] * (rh[i] + u) - t[i] * (rt[i] + u) + r[i]).collect(),
        ModelKind::InterHT => (0..d)
            .map(|i| h[i] * (ta[i] + 1.0) - t[i] * (ha[i] + 1.0) + r[i])
            .collect(),
        ModelKind::InterHTPlus => (0..d)
            .map(|i| u * h[i] * t[i] + h[i] * (u * rh[i] + 1.0) - t[i] * (u * rt[i] + 1.0) + r[i])
            .collect(),
        ModelKind::RotatE => {
            let n = d / 2;
            (0..n)
                .map(|j| {
                    let (re, im) = (
                        h[j] * r[j].cos() - h[j + n] * r[j].sin() - t[j],
                        h[j] * r[j].sin() + h[j + n] * r[j].cos() - t[j + n],
                    );
                    re.hypot(im)
                })
                .collect()
        }
        ModelKind::DistMult | ModelKind::ComplEx => return None,
    };
    Some(res)
}

/// Independent recompute of the native value.
pub fn value_oracle(inst: &KernelInstance) -> f64 {
    let [h, t, _, _, r, _, _] = &inst.parts;
    match (inst.kind, residual_oracle(inst)) {
        (ModelKind::RotatE, Some(m)) => match inst.norm {
            Norm::L1 => m.iter().sum(),
            Norm::L2 => m.iter().map(|x| x * x).sum::<f64>().sqrt(),
        },
        (_, Some(res)) => match inst.norm {
            Norm::L1 => res.iter().map(|x| x.abs()).sum(),
            Norm::L2 => res.iter().map(|x| x * x).sum::<f64>().sqrt(),
        },
        (ModelKind::DistMult, None) => (0..h.len()).map(|i| h[i] * r[i] * t[i]).sum(),
        (_, None) => {
            let n = h.len() / 2;
            (0..n)
                .map(|j| {
                    // Re((a+ib)(c+id)(e-if))
                    let (a, b, c, d, e, f) = (h[j], h[j + n], r[j], r[j + n], t[j], t[j + n]);
                    let (pr, pi) = (a * c - b * d, a * d + b * c);
                    pr * e + pi * f
                })
                .sum()
        }
    }
}

fn near_kink(inst: &KernelInstance) -> bool {
    if inst.norm == Norm::L2 && inst.kind != ModelKind::RotatE {
        return false;
    }
    residual_oracle(inst).is_some_and(|res| res.iter().any(|c| c.abs() < KINK_EPS))
}

/// Checks one kernel instance; returns `(max rel err, components)` or `None` at a kink.
pub fn check_kernel_instance(inst: &KernelInstance) -> Option<(f64, usize)> {
    if near_kink(inst) {
        return None;
    }
    let analytic = evaluate(inst.kind, &inst.inputs()).expect("consistent instance");
    let grads = [
        &analytic.head,
        &analytic.tail,
        &analytic.head_aux,
        &analytic.tail_aux,
        &analytic.rel,
        &analytic.rel_head,
        &analytic.rel_tail,
    ];
    let mut worst = 0.0f64;
    let mut count = 0;
    for (p, grad) in grads.iter().enumerate() {
        for i in 0..inst.parts[p].len() {
            let mut plus = inst.clone();
            plus.parts[p][i] += FD_STEP;
            let mut minus = inst.clone();
            minus.parts[p][i] -= FD_STEP;
            if near_kink(&plus) || near_kink(&minus) {
                return None;
            }
            let fp = evaluate(inst.kind, &plus.inputs()).unwrap().value;
            let fm = evaluate(inst.kind, &minus.inputs()).unwrap().value;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad[i], numeric));
            count += 1;
        }
    }
    Some((worst, count))
}

pub fn check_kernel<R: Rng>(kind: ModelKind, instances: usize, max_dim: usize, rng: &mut R) -> GradReport {
    let mut report = GradReport {
        target: kind.name().to_owned(),
        instances: 0,
        skipped_kinks: 0,
        components: 0,
        max_rel_err: 0.0,
        tolerance: KERNEL_TOL,
        passed: true,
    };
    while report.instances < instances {
        let dim = 2 * rng.gen_range(1..=max_dim / 2);
        let norm = if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
        let inst = KernelInstance::random(kind, dim, norm, rng);
        match check_kernel_instance(&inst) {
            Some((err, n)) => {
                report.instances += 1;
                report.components += n;
                report.max_rel_err = report.max_rel_err.max(err);
            }
            None => report.skipped_kinks += 1,
        }
    }
    report.passed = report.max_rel_err <= report.tolerance;
    report
}

fn random_block<R: Rng>(d: usize, hidden: usize, rng: &mut R) -> BlockWeights<f64> {
    let mut w = BlockWeights::zeros(d, hidden);
    for t in w.tensors_mut() {
        t.iter_mut().for_each(|x| *x = rng.gen_range(-0.8..0.8));
    }
    for g in w.ln1_g.iter_mut().chain(w.ln2_g.iter_mut()) {
        *g += 1.0;
    }
    w
}

/// Random block instance: `(weights, input, mask, upstream)`.
pub type BlockInstance = (BlockWeights<f64>, Mat<f64>, Vec<bool>, Mat<f64>);

pub fn random_block_instance<R: Rng>(d: usize, rows: usize, rng: &mut R) -> BlockInstance {
    let w = random_block(d, 2 * d, rng);
    let x = Mat::from_vec(rows, d, (0..rows * d).map(|_| rng.gen_range(-1.5..1.5)).collect());
    let mut mask: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.75)).collect();
    mask[rng.gen_range(0..rows)] = true;
    let up = Mat::from_vec(rows, d, (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
    (w, x, mask, up)
}

fn block_objective(w: &BlockWeights<f64>, heads: usize, x: &Mat<f64>, mask: &[bool], up: &Mat<f64>) -> f64 {
    let (y, _) = transformer_block(w, heads, x, mask).unwrap();
    y.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
}

/// Finite-difference check of the block for every weight and input entry.
pub fn check_block_instance(inst: &BlockInstance, heads: usize) -> (f64, usize) {
    let (w, x, mask, up) = inst;
    let (_, cache) = transformer_block(w, heads, x, mask).unwrap();
    let (dx, gw) = transformer_block_backward(w, &cache, up).unwrap();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (t, g) in gw.tensors().iter().enumerate() {
        for i in 0..g.len() {
            let mut wp = w.clone();
            wp.tensors_mut()[t][i] += FD_STEP;
            let mut wm = w.clone();
            wm.tensors_mut()[t][i] -= FD_STEP;
            let numeric =
                (block_objective(&wp, heads, x, mask, up) - block_objective(&wm, heads, x, mask, up)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[i], numeric));
            count += 1;
        }
    }
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += FD_STEP;
        let mut xm = x.clone();
        xm.data[i] -= FD_STEP;
        let numeric =
            (block_objective(w, heads, &xp, mask, up) - block_objective(w, heads, &xm, mask, up)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dx.data[i], numeric));
        count += 1;
    }
    (worst, count)
}

pub fn check_block<R: Rng>(instances: usize, rng: &mut R) -> GradReport {
    let mut report = GradReport {
        target: "transformer-block".into(),
        instances,
        skipped_kinks: 0,
        components: 0,
        max_rel_err: 0.0,
        tolerance: BLOCK_TOL,
        passed: true,
    };
    for _ in 0..instances {
        let d = [4usize, 8][rng.gen_range(0..2)];
        let heads = 2;
        let rows = rng.gen_range(2..=5);
        let inst = random_block_instance(d, rows, rng);
        let (err, n) = check_block_instance(&inst, heads);
        report.components += n;
        report.max_rel_err = report.max_rel_err.max(err);
    }
    report.passed = report.max_rel_err <= report.tolerance;
    report
}

/// Whole-encoder check (embedding, block, pooling, projection) on a tiny vocabulary.
pub fn check_encoder<R: Rng>(instances: usize, combiner: Combiner, rng: &mut R) -> GradReport {
    let mut report = GradReport {
        target: format!("encoder-{}", combiner.name()),
        instances,
        skipped_kinks: 0,
        components: 0,
        max_rel_err: 0.0,
        tolerance: BLOCK_TOL,
        passed: true,
    };
    let num_entities = 6;
    let anchors = AnchorSet::from_ids(num_entities, vec![1, 4]).unwrap();
    let tcfg = TokenConfig {
        k_anc: 2,
        k_in: 2,
        k_out: 1,
        use_center: true,
    };
    for _ in 0..instances {
        let cfg = EncoderConfig {
            d_tok: 4,
            heads: 2,
            ffn_mult: 2,
            combiner,
            out_dim: 6,
        };
        let mut w: EncoderWeights<f64> = EncoderWeights::init(cfg, 2, num_entities, rng);
        for t in w.block.tensors_mut() {
            t.iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
        }
        let pick = |rng: &mut R, pool: &[u32]| {
            if rng.gen_bool(0.3) {
                PAD
            } else {
                pool[rng.gen_range(0..pool.len())]
            }
        };
        let ents: Vec<u32> = (0..num_entities as u32).collect();
        let slots = vec![
            pick(rng, &[1, 4]),
            pick(rng, &[1, 4]),
            pick(rng, &ents),
            pick(rng, &ents),
            pick(rng, &ents),
            rng.gen_range(0..num_entities as u32),
        ];
        let tokens = SubgraphTokens { config: tcfg, slots };
        let up: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |w: &EncoderWeights<f64>| -> f64 {
            let e = encode_entity(w, &anchors, &tokens, 3).unwrap();
            e.vector.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let enc = encode_entity(&w, &anchors, &tokens, 3).unwrap();
        let mut grads = EncoderGrads::zeros_like(&w);
        encode_backward(&w, &enc, &up, &mut grads).unwrap();
        let mut worst = 0.0f64;
        let dense_grads = grads.dense.dense_tensors();
        for (t, g) in dense_grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut wp = w.clone();
                wp.dense_tensors_mut()[t][i] += FD_STEP;
                let mut wm = w.clone();
                wm.dense_tensors_mut()[t][i] -= FD_STEP;
                let numeric = (objective(&wp) - objective(&wm)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(g[i], numeric));
                report.components += 1;
            }
        }
        for row in 0..w.token_table.rows {
            for j in 0..w.token_table.cols {
                let analytic = grads.token_rows.get(&(row as u32)).map_or(0.0, |g| g[j]);
                let mut wp = w.clone();
                wp.token_table.row_mut(row)[j] += FD_STEP;
                let mut wm = w.clone();
                wm.token_table.row_mut(row)[j] -= FD_STEP;
                let numeric = (objective(&wp) - objective(&wm)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic, numeric));
                report.components += 1;
            }
        }
        report.max_rel_err = report.max_rel_err.max(worst);
    }
    report.passed = report.max_rel_err <= report.tolerance;
    report
}
