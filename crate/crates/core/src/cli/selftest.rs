//! Quick oracle and gradient checks shipped with the binary.

use rand::Rng;

use crate::datagen::{build_schedule, build_validation_splits, ImageShape};
use crate::dg::{rotate90, rr_aux_loss};
use crate::error::Result;
use crate::eval::owr_harmonic;
use crate::numerics::{gradcheck, rng, Mlp, MlpSpec, Tape, Tensor, Var};
use crate::owr::{
    bce_loss, bdoc_classify, cross_entropy, deepnno_classify, deepnno_scores, distillation_loss, nno_classify,
    one_hot, snnl_loss, ClassModel,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const TRIALS: u64 = 5;
const GRAD_TOL: f64 = 1e-4;

fn random_vec(r: &mut rng::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn grad_check(name: &'static str, build: impl Fn(&mut rng::Rng) -> (Tensor, Box<dyn Fn(&mut Tape, Var) -> Var>)) -> Check {
    let mut worst = 0.0f64;
    let mut error = None;
    for trial in 0..TRIALS {
        let mut r = rng::stream(7, name, trial);
        let (x, f) = build(&mut r);
        match gradcheck(|t, v| f(t, v), &x, 1e-5) {
            Ok(e) => worst = worst.max(e),
            Err(e) => error = Some(e.to_string()),
        }
    }
    match error {
        Some(e) => Check {
            name,
            passed: false,
            detail: e,
        },
        None => Check {
            name,
            passed: worst < GRAD_TOL,
            detail: format!("max relative error {worst:.2e}"),
        },
    }
}

fn gradient_checks() -> Vec<Check> {
    let (n, d, k) = (4usize, 3usize, 3usize);
    let labels: Vec<u32> = vec![0, 1, 0, 2];
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    vec![
        grad_check("gradient: bce", |r| {
            let mu = random_vec(r, k * d, 1.0);
            let targets = one_hot(&[0, 1, 2, 1], k);
            let f = move |t: &mut Tape, z: Var| {
                let s = deepnno_scores(t, z, &mu);
                bce_loss(t, s, &targets)
            };
            (Tensor::new(vec![n, d], random_vec(r, n * d, 1.0)).unwrap(), Box::new(f))
        }),
        grad_check("gradient: cross-entropy", |r| {
            let targets = idx.clone();
            let f = move |t: &mut Tape, z: Var| cross_entropy(t, z, &targets);
            (Tensor::new(vec![n, k], random_vec(r, n * k, 2.0)).unwrap(), Box::new(f))
        }),
        grad_check("gradient: distillation", |r| {
            let old = random_vec(r, n * d, 1.0);
            let f = move |t: &mut Tape, z: Var| distillation_loss(t, z, &old).unwrap();
            (Tensor::new(vec![n, d], random_vec(r, n * d, 1.0)).unwrap(), Box::new(f))
        }),
        grad_check("gradient: snnl", |r| {
            let l = labels.clone();
            let f = move |t: &mut Tape, z: Var| snnl_loss(t, z, &l, 0.7).unwrap();
            (Tensor::new(vec![n, d], random_vec(r, n * d, 1.0)).unwrap(), Box::new(f))
        }),
        grad_check("gradient: rotation head", |r| {
            let head = Mlp::new(&MlpSpec::new(vec![2 * d, 5, 4], r.random())).unwrap();
            let rot = random_vec(r, n * d, 1.0);
            let theta = vec![0, 1, 2, 3];
            let f = move |t: &mut Tape, z: Var| {
                let hp = head.bind(t);
                let zr = t.constant(vec![n, d], rot.clone());
                rr_aux_loss(t, &head, &hp, z, zr, &theta).unwrap()
            };
            (Tensor::new(vec![n, d], random_vec(r, n * d, 1.0)).unwrap(), Box::new(f))
        }),
        grad_check("gradient: b-doc objective", |r| {
            let mu = random_vec(r, k * d, 1.0);
            let old = random_vec(r, n * d, 1.0);
            let (l, targets) = (labels.clone(), idx.clone());
            let f = move |t: &mut Tape, z: Var| {
                let s = crate::owr::bdoc_scores(t, z, &mu, 0.8);
                let logits = t.scale(s, -1.0);
                let ce = cross_entropy(t, logits, &targets);
                let sn = snnl_loss(t, z, &l, 0.8).unwrap();
                let sn = t.scale(sn, 0.5);
                let ds = distillation_loss(t, z, &old).unwrap();
                let a = t.add(ce, sn);
                t.add(a, ds)
            };
            (Tensor::new(vec![n, d], random_vec(r, n * d, 1.0)).unwrap(), Box::new(f))
        }),
    ]
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn score_checks() -> Check {
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let mut r = rng::stream(11, "scores", trial);
        let d = r.random_range(1..5);
        let k = r.random_range(1..4);
        let mut m = ClassModel::default();
        for c in 0..k {
            m.centroids.insert(c as u32, random_vec(&mut r, d, 2.0));
            m.class_thresholds.insert(c as u32, r.random_range(0.1..3.0));
        }
        m.global_threshold = r.random_range(0.5..3.0);
        m.feature_std = r.random_range(0.2..2.0);
        let z = random_vec(&mut r, d, 2.0);
        let nno = nno_classify(&m, &z).unwrap();
        let dnno = deepnno_classify(&m, &z).unwrap();
        let bdoc = bdoc_classify(&m, &z).unwrap();
        for (i, mu) in m.centroids.values().enumerate() {
            let e = dist(&z, mu);
            worst = worst
                .max((nno.scores[i].1 - (1.0 - e / m.global_threshold)).abs())
                .max((dnno.scores[i].1 - (-0.5 * e).exp()).abs())
                .max((bdoc.scores[i].1 - e * e / m.feature_std).abs());
        }
    }
    Check {
        name: "oracle: method scores",
        passed: worst < 1e-9,
        detail: format!("max abs deviation {worst:.2e} over 100 cases"),
    }
}

fn harmonic_check() -> Check {
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let mut r = rng::stream(12, "harmonic", trial);
        let (a, b): (f64, f64) = (r.random(), r.random());
        worst = worst.max((owr_harmonic(a, b) - 2.0 / (1.0 / a + 1.0 / b)).abs());
    }
    Check {
        name: "oracle: owr harmonic mean",
        passed: worst < 1e-9,
        detail: format!("max abs deviation {worst:.2e}"),
    }
}

fn rotation_check() -> Result<Check> {
    let shape = ImageShape::new(5, 5, 3);
    let mut r = rng::stream(13, "rotation", 0);
    let px: Vec<f32> = (0..shape.len()).map(|_| r.random()).collect();
    let mut cur = px.clone();
    let mut ok = true;
    for turn in 1..=4 {
        cur = rotate90(&cur, shape, 1)?;
        let direct = rotate90(&px, shape, turn)?;
        ok &= cur == direct;
    }
    ok &= cur == px;
    Ok(Check {
        name: "oracle: rotation group",
        passed: ok,
        detail: "four quarter turns compose to the identity".into(),
    })
}

fn protocol_check() -> Result<Check> {
    let classes: Vec<u32> = (0..51).collect();
    let s = build_schedule(&classes, 26.0 / 51.0, 11, 5, 3)?;
    let steps: Vec<usize> = s.incremental_steps.iter().map(Vec::len).collect();
    let mut ok = s.base_classes.len() == 11 && steps == [5, 5, 5] && s.unknown_classes.len() == 25;
    let base: Vec<u32> = (0..11).collect();
    let trials = build_validation_splits(&base, 1, 3)?;
    let t = &trials[0];
    let variants: Vec<Vec<usize>> = t.val_incremental_steps.iter().map(|v| v.iter().map(Vec::len).collect()).collect();
    ok &= t.val_unknown_classes.len() == 2 && t.val_base_classes.len() == 5;
    ok &= variants == [vec![1, 1, 1, 1], vec![2, 2], vec![4]];
    Ok(Check {
        name: "oracle: protocol arithmetic",
        passed: ok,
        detail: format!("schedule {}+{:?}, {} unknown", s.base_classes.len(), steps, s.unknown_classes.len()),
    })
}

/// Runs every check; the caller decides how to report them.
pub fn run_selftest() -> Result<Vec<Check>> {
    let mut out = gradient_checks();
    out.push(score_checks());
    out.push(harmonic_check());
    out.push(rotation_check()?);
    out.push(protocol_check()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in run_selftest().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
