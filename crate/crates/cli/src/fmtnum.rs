//! Fixed 6-significant-digit number formatting for diffable reports.

pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if (1e-4..1e6).contains(&a) {
        let mut exp = a.log10().floor() as i32;
        if 10f64.powi(exp + 1) <= a {
            exp += 1;
        }
        let dec = (5 - exp).max(0) as usize;
        format!("{x:.dec$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Optional PSNR values serialize as the documented "inf" token.
pub fn sig6_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => sig6(v),
        None => "inf".into(),
    }
}
