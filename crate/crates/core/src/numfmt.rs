//! Fixed-precision number output: every score leaves the toolkit rounded to
//! nine significant digits so JSON and CSV bytes are stable.

use serde::Serializer;

pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Text form used in CSV cells.
pub fn sig9_text(x: f64) -> String {
    let r = sig9(x);
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

pub(crate) fn ser_sig9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(sig9(*x))
}

pub(crate) fn ser_opt_sig9<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&sig9(*v)),
        None => s.serialize_none(),
    }
}

pub(crate) fn ser_vec_sig9<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&sig9(*x))?;
    }
    seq.end()
}
