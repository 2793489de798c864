use super::{GradsMut, ModelKind, Norm, ScoreError, ScoreGrad, ScoreInputs};
use crate::real::Real;

#[inline]
fn sign0<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check<T>(kind: ModelKind, inp: &ScoreInputs<'_, T>) -> Result<(), ScoreError> {
    let d = inp.head.len();
    if d == 0 || (kind.needs_even_dim() && !d.is_multiple_of(2)) {
        return Err(ScoreError::BadDimension { kind, dim: d });
    }
    let none = 0;
    let aux = if kind.uses_entity_aux() { d } else { none };
    let rel = match kind {
        ModelKind::RotatE => d / 2,
        k if k.uses_relation_vector() => d,
        _ => none,
    };
    let pair = if kind.uses_relation_pair() { d } else { none };
    let fields: [(&'static str, usize, usize); 6] = [
        ("tail", d, inp.tail.len()),
        ("head_aux", aux, inp.head_aux.len()),
        ("tail_aux", aux, inp.tail_aux.len()),
        ("rel", rel, inp.rel.len()),
        ("rel_head", pair, inp.rel_head.len()),
        ("rel_tail", pair, inp.rel_tail.len()),
    ];
    for (field, expected, found) in fields {
        if expected != found {
            return Err(ScoreError::DimensionMismatch {
                kind,
                field,
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// `‖res‖_p` for a real residual given component-wise, plus the backward
/// pass: `back(i, ∂value/∂res_i · upstream, grads)`.
fn residual_norm<T: Real>(
    d: usize,
    norm: Norm,
    res: impl Fn(usize) -> T,
    grads: Option<(T, &mut GradsMut<'_, T>)>,
    mut back: impl FnMut(usize, T, &mut GradsMut<'_, T>),
) -> T {
    let value = match norm {
        Norm::L1 => (0..d).map(|i| res(i).abs()).sum(),
        Norm::L2 => (0..d).map(|i| res(i) * res(i)).sum::<T>().sqrt(),
    };
    if let Some((up, g)) = grads {
        for i in 0..d {
            let r = res(i);
            let gi = match norm {
                Norm::L1 => sign0(r),
                Norm::L2 if value > T::zero() => r / value,
                Norm::L2 => T::zero(),
            };
            back(i, gi * up, g);
        }
    }
    value
}

fn transe<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, r, t) = (inp.head, inp.rel, inp.tail);
    residual_norm(
        h.len(),
        inp.norm,
        |i| h[i] - t[i] + r[i],
        grads,
        |i, g, gr| {
            gr.head[i] += g;
            gr.rel[i] += g;
            gr.tail[i] -= g;
        },
    )
}

fn pairre<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, rh, rt, t) = (inp.head, inp.rel_head, inp.rel_tail, inp.tail);
    residual_norm(
        h.len(),
        inp.norm,
        |i| h[i] * rh[i] - t[i] * rt[i],
        grads,
        |i, g, gr| {
            gr.head[i] += g * rh[i];
            gr.rel_head[i] += g * h[i];
            gr.tail[i] -= g * rt[i];
            gr.rel_tail[i] -= g * t[i];
        },
    )
}

/// Shared by both versions; v1 passes `offset = 0`.
fn triplere<T: Real>(inp: &ScoreInputs<'_, T>, offset: T, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, rh, rm, rt, t) = (inp.head, inp.rel_head, inp.rel, inp.rel_tail, inp.tail);
    residual_norm(
        h.len(),
        inp.norm,
        |i| h[i] * (rh[i] + offset) - t[i] * (rt[i] + offset) + rm[i],
        grads,
        |i, g, gr| {
            gr.head[i] += g * (rh[i] + offset);
            gr.rel_head[i] += g * h[i];
            gr.tail[i] -= g * (rt[i] + offset);
            gr.rel_tail[i] -= g * t[i];
            gr.rel[i] += g;
        },
    )
}

fn interht<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, t, ha, ta, r) = (inp.head, inp.tail, inp.head_aux, inp.tail_aux, inp.rel);
    let one = T::one();
    residual_norm(
        h.len(),
        inp.norm,
        |i| h[i] * (ta[i] + one) - t[i] * (ha[i] + one) + r[i],
        grads,
        |i, g, gr| {
            gr.head[i] += g * (ta[i] + one);
            gr.tail_aux[i] += g * h[i];
            gr.tail[i] -= g * (ha[i] + one);
            gr.head_aux[i] -= g * t[i];
            gr.rel[i] += g;
        },
    )
}

fn interht_plus<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, t, r, rh, rt, u) = (inp.head, inp.tail, inp.rel, inp.rel_head, inp.rel_tail, inp.u);
    let one = T::one();
    residual_norm(
        h.len(),
        inp.norm,
        |i| u * h[i] * t[i] + h[i] * (u * rh[i] + one) - t[i] * (u * rt[i] + one) + r[i],
        grads,
        |i, g, gr| {
            gr.head[i] += g * (u * t[i] + u * rh[i] + one);
            gr.tail[i] += g * (u * h[i] - u * rt[i] - one);
            gr.rel_head[i] += g * u * h[i];
            gr.rel_tail[i] -= g * u * t[i];
            gr.rel[i] += g;
        },
    )
}

fn rotate<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let n = inp.head.len() / 2;
    let (h, t, phase) = (inp.head, inp.tail, inp.rel);
    let res = |j: usize| {
        let (c, s) = (phase[j].cos(), phase[j].sin());
        let (hr, hi) = (h[j], h[j + n]);
        (hr * c - hi * s - t[j], hr * s + hi * c - t[j + n])
    };
    let modulus = |j: usize| {
        let (a, b) = res(j);
        (a * a + b * b).sqrt()
    };
    let value = match inp.norm {
        Norm::L1 => (0..n).map(modulus).sum(),
        Norm::L2 => (0..n)
            .map(|j| {
                let (a, b) = res(j);
                a * a + b * b
            })
            .sum::<T>()
            .sqrt(),
    };
    if let Some((up, gr)) = grads {
        for j in 0..n {
            let (a, b) = res(j);
            let scale = match inp.norm {
                Norm::L1 => modulus(j),
                Norm::L2 => value,
            };
            if scale == T::zero() {
                continue;
            }
            let (ga, gb) = (up * a / scale, up * b / scale);
            let (c, s) = (phase[j].cos(), phase[j].sin());
            let (hr, hi) = (h[j], h[j + n]);
            gr.head[j] += ga * c + gb * s;
            gr.head[j + n] += gb * c - ga * s;
            gr.tail[j] -= ga;
            gr.tail[j + n] -= gb;
            gr.rel[j] += ga * (-hr * s - hi * c) + gb * (hr * c - hi * s);
        }
    }
    value
}

fn distmult<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let (h, r, t) = (inp.head, inp.rel, inp.tail);
    let value = (0..h.len()).map(|i| h[i] * r[i] * t[i]).sum();
    if let Some((up, gr)) = grads {
        for i in 0..h.len() {
            gr.head[i] += up * r[i] * t[i];
            gr.rel[i] += up * h[i] * t[i];
            gr.tail[i] += up * h[i] * r[i];
        }
    }
    value
}

fn complex<T: Real>(inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    let n = inp.head.len() / 2;
    let (h, r, t) = (inp.head, inp.rel, inp.tail);
    // h = a + ib, r = c + id, t = e + if; Re(h r conj(t)) = (ac - bd)e + (ad + bc)f
    let value = (0..n)
        .map(|j| {
            let (a, b, c, d, e, f) = (h[j], h[j + n], r[j], r[j + n], t[j], t[j + n]);
            (a * c - b * d) * e + (a * d + b * c) * f
        })
        .sum();
    if let Some((up, gr)) = grads {
        for j in 0..n {
            let (a, b, c, d, e, f) = (h[j], h[j + n], r[j], r[j + n], t[j], t[j + n]);
            gr.head[j] += up * (c * e + d * f);
            gr.head[j + n] += up * (c * f - d * e);
            gr.rel[j] += up * (a * e + b * f);
            gr.rel[j + n] += up * (a * f - b * e);
            gr.tail[j] += up * (a * c - b * d);
            gr.tail[j + n] += up * (a * d + b * c);
        }
    }
    value
}

fn dispatch<T: Real>(kind: ModelKind, inp: &ScoreInputs<'_, T>, grads: Option<(T, &mut GradsMut<'_, T>)>) -> T {
    match kind {
        ModelKind::TransE => transe(inp, grads),
        ModelKind::RotatE => rotate(inp, grads),
        ModelKind::PairRE => pairre(inp, grads),
        ModelKind::TripleReV1 => triplere(inp, T::zero(), grads),
        ModelKind::TripleReV2 => triplere(inp, inp.u, grads),
        ModelKind::DistMult => distmult(inp, grads),
        ModelKind::ComplEx => complex(inp, grads),
        ModelKind::InterHT => interht(inp, grads),
        ModelKind::InterHTPlus => interht_plus(inp, grads),
    }
}

/// Native value (distance or bilinear score) and full gradient.
pub fn evaluate<T: Real>(kind: ModelKind, inp: &ScoreInputs<'_, T>) -> Result<ScoreGrad<T>, ScoreError> {
    check(kind, inp)?;
    let mut out = ScoreGrad::zeros_like(inp);
    out.value = dispatch(kind, inp, Some((T::one(), &mut out.as_mut())));
    Ok(out)
}

/// Lower-is-better `d_r`: the distance for distance models, minus the score
/// for bilinear ones.
pub fn score_for_loss<T: Real>(kind: ModelKind, inp: &ScoreInputs<'_, T>) -> Result<T, ScoreError> {
    check(kind, inp)?;
    let v = dispatch(kind, inp, None);
    Ok(if kind.is_bilinear() { -v } else { v })
}

/// `d_r` plus accumulation of `upstream · ∂d_r/∂x` into `grads`.
pub fn score_for_loss_grad<T: Real>(
    kind: ModelKind,
    inp: &ScoreInputs<'_, T>,
    upstream: T,
    grads: &mut GradsMut<'_, T>,
) -> Result<T, ScoreError> {
    check(kind, inp)?;
    if kind.is_bilinear() {
        Ok(-dispatch(kind, inp, Some((-upstream, grads))))
    } else {
        Ok(dispatch(kind, inp, Some((upstream, grads))))
    }
}

/// `‖h∘(t_a+1) − t∘(h_a+1) + r‖_p`
pub fn interht_distance<T: Real>(inp: &ScoreInputs<'_, T>) -> Result<ScoreGrad<T>, ScoreError> {
    evaluate(ModelKind::InterHT, inp)
}

/// `‖u·h∘t + h∘(u·r_h+1) − t∘(u·r_t+1) + r‖_p`
pub fn interht_plus_distance<T: Real>(inp: &ScoreInputs<'_, T>) -> Result<ScoreGrad<T>, ScoreError> {
    evaluate(ModelKind::InterHTPlus, inp)
}

pub fn transe_distance<T: Real>(h: &[T], r: &[T], t: &[T], norm: Norm) -> Result<ScoreGrad<T>, ScoreError> {
    let inp = ScoreInputs {
        norm,
        ..ScoreInputs::new(h, r, t)
    };
    evaluate(ModelKind::TransE, &inp)
}

/// Rotation by unit-modulus `e^{iθ}`; `phase` holds one angle per complex component.
pub fn rotate_distance<T: Real>(h: &[T], phase: &[T], t: &[T], norm: Norm) -> Result<ScoreGrad<T>, ScoreError> {
    let inp = ScoreInputs {
        norm,
        ..ScoreInputs::new(h, phase, t)
    };
    evaluate(ModelKind::RotatE, &inp)
}

pub fn pairre_distance<T: Real>(
    h: &[T],
    rel_head: &[T],
    rel_tail: &[T],
    t: &[T],
    norm: Norm,
) -> Result<ScoreGrad<T>, ScoreError> {
    let inp = ScoreInputs {
        rel_head,
        rel_tail,
        norm,
        ..ScoreInputs::new(h, &[], t)
    };
    evaluate(ModelKind::PairRE, &inp)
}

#[allow(clippy::too_many_arguments)]
pub fn triplere_distance<T: Real>(
    h: &[T],
    rel_head: &[T],
    rel_mid: &[T],
    rel_tail: &[T],
    t: &[T],
    u: T,
    version: u8,
    norm: Norm,
) -> Result<ScoreGrad<T>, ScoreError> {
    let kind = if version == 1 {
        ModelKind::TripleReV1
    } else {
        ModelKind::TripleReV2
    };
    let inp = ScoreInputs {
        rel_head,
        rel_tail,
        u,
        norm,
        ..ScoreInputs::new(h, rel_mid, t)
    };
    evaluate(kind, &inp)
}

pub fn distmult_score<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<ScoreGrad<T>, ScoreError> {
    evaluate(ModelKind::DistMult, &ScoreInputs::new(h, r, t))
}

pub fn complex_score<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<ScoreGrad<T>, ScoreError> {
    evaluate(ModelKind::ComplEx, &ScoreInputs::new(h, r, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interht_worked_example() {
        let (h, t, r) = ([1.0, 2.0], [0.5, 1.0], [1.0, 1.0]);
        let (ta, ha) = ([1.0, 0.0], [0.0, 1.0]);
        let inp = ScoreInputs {
            head_aux: &ha,
            tail_aux: &ta,
            ..ScoreInputs::new(&h[..], &r, &t)
        };
        let out = interht_distance(&inp).unwrap();
        assert_eq!(out.value, 3.5);
        assert_eq!(score_for_loss(ModelKind::InterHT, &inp).unwrap(), 3.5);
        // residual [2.5, 1] is positive everywhere, so ∂/∂r = [1, 1]
        assert_eq!(out.rel, vec![1.0, 1.0]);
        assert_eq!(out.head, vec![2.0, 1.0]);
        assert_eq!(out.tail_aux, vec![1.0, 2.0]);
    }

    #[test]
    fn interht_zero_at_identity() {
        let h = [0.3, -1.2, 4.0];
        let z = [0.0; 3];
        let inp = ScoreInputs {
            head_aux: &z,
            tail_aux: &z,
            ..ScoreInputs::new(&h[..], &z, &h)
        };
        assert_eq!(interht_distance(&inp).unwrap().value, 0.0);
    }

    #[test]
    fn interht_plus_worked_example() {
        let ones = [1.0, 1.0];
        let zero = [0.0, 0.0];
        let inp = ScoreInputs {
            rel_head: &ones,
            rel_tail: &ones,
            u: 1.0,
            ..ScoreInputs::new(&ones[..], &zero, &ones)
        };
        assert_eq!(interht_plus_distance(&inp).unwrap().value, 2.0);
    }

    #[test]
    fn transe_examples() {
        let d = transe_distance(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], Norm::L1).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.head, vec![0.0, 0.0], "subgradient at zero residual is zero");
        let d = transe_distance(&[0.0, 0.0], &[3.0, 4.0], &[0.0, 0.0], Norm::L2).unwrap();
        assert_eq!(d.value, 5.0);
    }

    #[test]
    fn rotate_quarter_turn() {
        let d = rotate_distance(&[1.0, 0.0], &[std::f64::consts::FRAC_PI_2], &[0.0, 1.0], Norm::L1).unwrap();
        assert!(d.value.abs() < 1e-15);
    }

    #[test]
    fn pairre_and_triplere_examples() {
        assert_eq!(
            pairre_distance(&[2.0], &[0.5], &[1.0], &[1.0], Norm::L1).unwrap().value,
            0.0
        );
        let v1 = triplere_distance(
            &[1.0, 2.0],
            &[0.5, 1.5],
            &[0.1, 0.2],
            &[2.0, 1.0],
            &[0.3, 0.7],
            0.0,
            1,
            Norm::L1,
        )
        .unwrap();
        let v2 = triplere_distance(
            &[1.0, 2.0],
            &[0.5, 1.5],
            &[0.1, 0.2],
            &[2.0, 1.0],
            &[0.3, 0.7],
            0.0,
            2,
            Norm::L1,
        )
        .unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn bilinear_examples() {
        let ones = [1.0; 3];
        assert_eq!(distmult_score(&ones, &ones, &ones).unwrap().value, 3.0);
        assert_eq!(
            score_for_loss(ModelKind::DistMult, &ScoreInputs::new(&ones[..], &ones, &ones)).unwrap(),
            -3.0
        );
        let (h, t) = ([1.0, 2.0, 0.0, 0.0], [3.0, -1.0, 0.0, 0.0]);
        let r = [0.5, 2.0, 0.0, 0.0];
        assert_eq!(
            complex_score(&h, &r, &t).unwrap().value,
            distmult_score(&h[..2], &r[..2], &t[..2]).unwrap().value
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = transe_distance(&[1.0, 2.0], &[1.0], &[1.0, 2.0], Norm::L1).unwrap_err();
        assert_eq!(
            err,
            ScoreError::DimensionMismatch {
                kind: ModelKind::TransE,
                field: "rel",
                expected: 2,
                found: 1
            }
        );
        assert!(matches!(
            complex_score(&[1.0; 3], &[1.0; 3], &[1.0; 3]),
            Err(ScoreError::BadDimension { .. })
        ));
        let ha = [0.0; 2];
        let inp = ScoreInputs {
            head_aux: &ha,
            ..ScoreInputs::new(&[1.0, 2.0][..], &[0.0, 0.0], &[1.0, 2.0])
        };
        assert!(interht_distance(&inp).is_err());
    }

    #[test]
    fn unused_inputs_get_zero_gradient() {
        let ones = [1.0, -2.0];
        let inp = ScoreInputs {
            rel_head: &ones,
            rel_tail: &ones,
            u: 0.0,
            ..ScoreInputs::new(&ones[..], &[0.5, 0.5], &[0.0, 3.0])
        };
        let g = interht_plus_distance(&inp).unwrap();
        assert_eq!(g.rel_head, vec![0.0, 0.0]);
        assert_eq!(g.rel_tail, vec![0.0, 0.0]);
    }
}
