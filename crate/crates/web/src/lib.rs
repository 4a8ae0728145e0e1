//! Browser demo: three small interactive views of the feature transforms,
//! rendered to SVG strings by the core crate.
//!
//! The plain functions return `ftcl::Result` and are what the native tests
//! exercise; the `#[wasm_bindgen]` wrappers only convert errors to strings.

use std::fmt::Write as _;

use ftcl::feature_transform::{mix_into, pos_extrapolate, pos_interpolate, Lambda};
use ftcl::numerics::{
    dot_slice, l2_normalize, random_permutation, sample_beta, BetaSample, FeatureVector, Matrix, SeededRng,
    StreamKey,
};
use ftcl::telemetry::{render_svg, PlotStyle, Series};
use ftcl::{Error, Result};
use statrs::function::gamma::ln_gamma;
use wasm_bindgen::prelude::*;

const CURVE_POINTS: usize = 201;

/// Transformed positive score at `λ` for two unit vectors with cosine `s`:
/// `[raw dot product, cosine after renormalization]`.
pub fn transformed_scores(s: f64, lambda: f64) -> Result<[f64; 2]> {
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::LambdaOutOfRange {
            lambda: s,
            lo: -1.0,
            hi: 1.0,
        });
    }
    let theta = s.acos();
    let q = FeatureVector::unit(vec![1.0, 0.0])?;
    let k = FeatureVector::unit(vec![theta.cos(), theta.sin()])?;
    let (qh, kh) = mix_positive(&q, &k, lambda)?;
    let raw = dot_slice(qh.values(), kh.values());
    let cos = match (l2_normalize(&qh), l2_normalize(&kh)) {
        (Ok(a), Ok(b)) => dot_slice(a.values(), b.values()),
        // λ = 1/2 with s = -1 collapses both vectors to zero
        _ => f64::NAN,
    };
    Ok([raw, cos])
}

/// Extrapolation for `λ ≥ 1`, interpolation below; no renormalization.
fn mix_positive(q: &FeatureVector, k: &FeatureVector, lambda: f64) -> Result<(FeatureVector, FeatureVector)> {
    if lambda >= 1.0 {
        pos_extrapolate(q, k, lambda, false)
    } else {
        pos_interpolate(q, k, lambda, false)
    }
}

/// Raw and renormalized positive score over `λ ∈ [0, 2]` for cosine `s`.
pub fn score_curve(s: f64) -> Result<String> {
    let mut raw = Vec::with_capacity(CURVE_POINTS);
    let mut cos = Vec::with_capacity(CURVE_POINTS);
    for i in 0..CURVE_POINTS {
        let lambda = 2.0 * i as f64 / (CURVE_POINTS - 1) as f64;
        let [r, c] = transformed_scores(s, lambda)?;
        raw.push((lambda, r));
        if c.is_finite() {
            cos.push((lambda, c));
        }
    }
    let flat = vec![(0.0, s), (2.0, s)];
    render_svg(
        &[
            Series::new("raw score", raw),
            Series::new("after renormalization", cos),
            Series::new("untransformed", flat),
        ],
        &PlotStyle {
            title: format!("positive score vs λ (cos = {s:.3})"),
            x_label: "λ".into(),
            y_label: "score".into(),
            width: 720,
            height: 420,
        },
    )
}

/// Histogram of `draws` samples of `shift + Beta(alpha, beta)` against the exact density.
pub fn beta_histogram(alpha: f64, beta: f64, shift: f64, draws: u32, seed: u64) -> Result<String> {
    const BINS: usize = 40;
    let spec = BetaSample::new(alpha, beta, shift);
    spec.validate()?;
    if draws == 0 {
        return Err(Error::EmptyInput("histogram draws"));
    }
    let mut rng = SeededRng::new(seed, StreamKey::new(0, 0));
    let mut counts = [0usize; BINS];
    let mut sum = 0.0;
    for _ in 0..draws {
        let x = sample_beta(&spec, &mut rng)? - shift;
        sum += x;
        counts[((x * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    let width = 1.0 / BINS as f64;
    let mut hist = Vec::with_capacity(2 * BINS);
    for (i, &c) in counts.iter().enumerate() {
        let h = c as f64 / (draws as f64 * width);
        hist.push((shift + i as f64 * width, h));
        hist.push((shift + (i + 1) as f64 * width, h));
    }
    let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
    let density: Vec<(f64, f64)> = (1..200)
        .map(|i| {
            let x = i as f64 / 200.0;
            let p = ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_b).exp();
            (shift + x, p)
        })
        .filter(|p| p.1.is_finite())
        .collect();
    render_svg(
        &[Series::new("sampled", hist), Series::new("density", density)],
        &PlotStyle {
            title: format!(
                "λ ~ {shift} + Beta({alpha}, {beta}); sample mean {:.4}, exact {:.4}",
                shift + sum / draws as f64,
                spec.mean()
            ),
            x_label: "λ".into(),
            y_label: "density".into(),
            width: 720,
            height: 420,
        },
    )
}

/// 2-D picture: a query/key pair at `angle_deg` apart, its extrapolation by
/// `lambda`, and `k` random negatives interpolated with a permuted copy
/// using `λ ~ Beta(alpha_in, alpha_in)` per entry.
pub fn geometry(angle_deg: f64, lambda: f64, k: u32, alpha_in: f64, seed: u64) -> Result<String> {
    let theta = angle_deg.to_radians();
    let q = FeatureVector::unit(vec![1.0, 0.0])?;
    let kp = FeatureVector::unit(vec![theta.cos(), theta.sin()])?;
    let (qh, kh) = mix_positive(&q, &kp, lambda)?;
    let spec = BetaSample::symmetric(alpha_in, 0.0);
    spec.validate()?;
    let mut rng = SeededRng::new(seed, StreamKey::new(0, 0));
    let k = k.clamp(2, 512) as usize;
    let mut rows = Vec::with_capacity(k);
    for _ in 0..k {
        let a = rand_angle(&mut rng);
        rows.push([a.cos(), a.sin()]);
    }
    let queue = Matrix::from_rows(&rows)?;
    let perm = random_permutation(k, &mut rng);
    let mut mixed = Matrix::zeros(k, 2);
    for (i, &j) in perm.iter().enumerate() {
        let l = Lambda::Scalar(sample_beta(&spec, &mut rng)?);
        let mut v = [0.0; 2];
        mix_into(queue.row(i), queue.row(j), &l, &mut v);
        let unit = l2_normalize(&FeatureVector::new(v.to_vec()))?;
        mixed.row_mut(i).copy_from_slice(unit.values());
    }

    let size = 420.0;
    let c = size / 2.0;
    let r = size * 0.3;
    let px = |v: &[f64]| (c + r * v[0], c - r * v[1]);
    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {size} {size}" width="{size}" height="{size}" font-family="sans-serif" font-size="12"><rect width="{size}" height="{size}" fill="white"/><circle cx="{c}" cy="{c}" r="{r}" fill="none" stroke="#bbb"/>"##
    );
    for row in queue.iter_rows() {
        let (x, y) = px(row);
        let _ = write!(svg, r##"<circle class="neg" cx="{x:.2}" cy="{y:.2}" r="3" fill="#9ecae1"/>"##);
    }
    for row in mixed.iter_rows() {
        let (x, y) = px(row);
        let _ = write!(svg, r##"<circle class="neg-mixed" cx="{x:.2}" cy="{y:.2}" r="3" fill="#e6550d"/>"##);
    }
    let arrow = |svg: &mut String, v: &[f64], color: &str, label: &str, dashed: bool| {
        let (x, y) = px(v);
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = write!(
            svg,
            r#"<line x1="{c}" y1="{c}" x2="{x:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}" fill="{color}">{label}</text>"#,
            x + 4.0,
            y - 4.0
        );
    };
    arrow(&mut svg, q.values(), "#1f77b4", "q", false);
    arrow(&mut svg, kp.values(), "#2ca02c", "k", false);
    arrow(&mut svg, qh.values(), "#1f77b4", "q̂", true);
    arrow(&mut svg, kh.values(), "#2ca02c", "k̂", true);
    let raw = dot_slice(qh.values(), kh.values());
    let _ = write!(
        svg,
        r#"<text x="10" y="18">q·k = {:.3}   q̂·k̂ = {raw:.3}</text><text x="10" y="{}">blue dots: queue, orange: interpolated + renormalized</text></svg>"#,
        theta.cos(),
        size - 10.0
    );
    Ok(svg)
}

fn rand_angle(rng: &mut SeededRng) -> f64 {
    use rand::Rng as _;
    rng.random_range(0.0..std::f64::consts::TAU)
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = scoreCurve)]
pub fn score_curve_js(s: f64) -> std::result::Result<String, JsValue> {
    js(score_curve(s))
}

#[wasm_bindgen(js_name = betaHistogram)]
pub fn beta_histogram_js(alpha: f64, beta: f64, shift: f64, draws: u32, seed: u32) -> std::result::Result<String, JsValue> {
    js(beta_histogram(alpha, beta, shift, draws, seed as u64))
}

#[wasm_bindgen(js_name = geometry)]
pub fn geometry_js(angle_deg: f64, lambda: f64, k: u32, alpha_in: f64, seed: u32) -> std::result::Result<String, JsValue> {
    js(geometry(angle_deg, lambda, k, alpha_in, seed as u64))
}
