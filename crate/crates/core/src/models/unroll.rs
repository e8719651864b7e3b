use super::{forward, ModelParams};
use crate::error::{Error, Result};
use crate::numkit::{add, cp_matrix, matmul, matvec, mode_product, Matrix, Vector};
use crate::tasks::SequenceBatch;

/// Effective input map and bias of layer `l` (0-based) at one step, given the
/// previous state `h` of that layer:
/// `Ū = (A ×₁ h)ᵀ + U` and `b̄ = V h + b`.
fn effective_step(p: &ModelParams, l: usize, h: &Vector) -> Result<(Matrix, Vector)> {
    let layer = p.layer(l);
    let mut u_bar = layer.u.clone();
    if let Some(t) = &layer.tensor {
        u_bar = add(&u_bar, &mode_product(t, h, 1)?.transpose())?;
    }
    if let Some(f) = &layer.cp {
        u_bar = add(&u_bar, &cp_matrix(&f.a, &f.b, &f.c, h)?)?;
    }
    let mut b_bar = matvec(&layer.v, h)?.into_vec();
    for (o, b) in b_bar.iter_mut().zip(layer.b.as_slice()) {
        *o += b;
    }
    Ok((u_bar, Vector::from_vec_unchecked(b_bar)))
}

/// Evaluates `h_t^{(l)}` of sequence `seq` for a linear model through the
/// unrolled product form
///
/// ```text
/// h_t^{(l)} = (Ū^{(l)} ⋯ Ū^{(1)}) x_t + Σ_j (Ū^{(l)} ⋯ Ū^{(j+1)}) b̄^{(j)}
/// ```
///
/// where `Ū`, `b̄` depend on the previous-step states, which are taken from
/// the recurrence. `t` and `l` are 1-based.
pub fn unroll_closed_form(
    p: &ModelParams,
    x: &SequenceBatch,
    seq: usize,
    t: usize,
    l: usize,
) -> Result<Vector> {
    if !p.config().activation.is_linear() {
        return Err(Error::Unsupported {
            operation: "unroll_closed_form",
            reason: "requires a linear activation".into(),
        });
    }
    if t == 0 || t > x.steps() || l == 0 || l > p.depth() || seq >= x.batch() {
        return Err(Error::InvalidArgument(format!(
            "index out of range: seq={seq}, t={t}, l={l} (batch {}, T={}, L={})",
            x.batch(),
            x.steps(),
            p.depth()
        )));
    }
    let trace = (t > 1).then(|| forward(p, &x.slice(seq, seq + 1))).transpose()?;
    let prev = |i: usize| -> Vector {
        match &trace {
            Some(tr) => Vector::from_vec_unchecked(tr.state(0, t - 1, i + 1).to_vec()),
            None => p.layer(i).h0.clone(),
        }
    };
    // Running products Ū^{(i)} ⋯ Ū^{(1)} and the accumulated bias sum.
    let mut prod: Option<Matrix> = None;
    let mut bias = Vector::zeros(p.hidden());
    for i in 0..l {
        let (u_bar, b_bar) = effective_step(p, i, &prev(i))?;
        let carried = if i == 0 { Vector::zeros(p.hidden()) } else { matvec(&u_bar, &bias)? };
        bias = Vector::from_vec_unchecked(
            carried.as_slice().iter().zip(b_bar.as_slice()).map(|(a, b)| a + b).collect(),
        );
        prod = Some(match prod {
            None => u_bar,
            Some(m) => matmul(&u_bar, &m)?,
        });
    }
    let xt = Vector::new(x.input(seq, t).to_vec())?;
    let mut h = matvec(prod.as_ref().expect("l >= 1"), &xt)?.into_vec();
    for (o, b) in h.iter_mut().zip(bias.as_slice()) {
        *o += b;
    }
    Ok(Vector::from_vec_unchecked(h))
}
