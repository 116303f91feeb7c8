use ndarray::{Array1, ArrayView1};

/// Lower bound applied to each norm before dividing.
pub const COSINE_EPS: f64 = 1e-12;

/// `a·b / (max(|a|, ε) · max(|b|, ε))`.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt().max(COSINE_EPS);
    let nb = b.dot(&b).sqrt().max(COSINE_EPS);
    a.dot(&b) / (na * nb)
}

/// Cosine together with its gradients w.r.t. `a` and `b`. Where a norm sits
/// below ε the denominator is constant, so only the numerator contributes.
pub fn cosine_with_grad(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let raw_a = a.dot(&a).sqrt();
    let raw_b = b.dot(&b).sqrt();
    let (na, nb) = (raw_a.max(COSINE_EPS), raw_b.max(COSINE_EPS));
    let c = a.dot(&b) / (na * nb);
    let mut da = b.mapv(|v| v / (na * nb));
    let mut db = a.mapv(|v| v / (na * nb));
    if raw_a > COSINE_EPS {
        da.scaled_add(-c / (raw_a * raw_a), &a);
    }
    if raw_b > COSINE_EPS {
        db.scaled_add(-c / (raw_b * raw_b), &b);
    }
    (c, da, db)
}
