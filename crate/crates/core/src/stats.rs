//! Small descriptive-statistics helpers shared by the feature, selection and
//! backtest code.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (denominator n - 1).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Population standard deviation (denominator n).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Centered cross products `(Sxx, Syy, Sxy)` of two equal-length slices.
pub fn centered_products(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    debug_assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (da, db) = (a - mx, b - my);
        (sxx + da * da, syy + db * db, sxy + da * db)
    })
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (sxx, syy, sxy) = centered_products(x, y);
    if sxx <= 0.0 || syy <= 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Simple OLS fit `y = a + b x`, returning `(a, b)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let (sxx, _, sxy) = centered_products(x, y);
    if sxx <= 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((mean(y) - b * mean(x), b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_of_scaled_copy_is_one() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[2.0; 4]).is_nan());
    }

    #[test]
    fn ols_line_recovers_exact_relation() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (a, b) = ols_line(&x, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
    }
}
