use super::{DataError, Dataset, Result};
use crate::tensor::{Rng, Tensor};

/// Unit-variance Gaussian blobs, one per class, shaped `(dim, 1, 1)`.
///
/// Centres sit on a sphere of radius `separation * classes / 2` around the
/// origin and are redrawn until every pair is at least `separation` apart.
/// Keeping the centres off the origin makes the classes separable by an
/// argmax over bias-free linear scores.
pub fn toy_blobs(rng: &mut Rng, n_per_class: usize, classes: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(DataError::Invalid(format!("separation must be > 0, got {separation}")));
    }
    if classes == 0 || dim == 0 {
        return Err(DataError::Invalid("classes and dim must be >= 1".into()));
    }
    let radius = separation * classes as f64 / 2.0;
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut tries = 0;
    while centres.len() < classes {
        tries += 1;
        if tries > 100_000 {
            return Err(DataError::Invalid(format!(
                "cannot place {classes} centres {separation} apart in {dim} dimensions"
            )));
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let c: Vec<f64> = v.iter().map(|x| x * radius / norm).collect();
        let far = centres
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= separation);
        if far {
            centres.push(c);
        }
    }
    let n = n_per_class * classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        data.extend(centres[k].iter().map(|&m| m + rng.normal()));
        labels.push(k);
    }
    let images = Tensor::new(vec![n, dim, 1, 1], data).expect("sizes agree");
    Dataset::new(images, labels, classes)
}

/// Smallest signed margin over all class pairs along the line joining the
/// class means, measured from the midpoint. Positive means every pair is
/// linearly separated.
pub fn pairwise_margin(d: &Dataset) -> f64 {
    let dim = d.input_shape().len();
    let mut means = vec![vec![0.0; dim]; d.classes()];
    let mut counts = vec![0usize; d.classes()];
    for i in 0..d.len() {
        counts[d.label(i)] += 1;
        for (m, &x) in means[d.label(i)].iter_mut().zip(d.image(i)) {
            *m += x;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let mut worst = f64::INFINITY;
    for a in 0..d.classes() {
        for b in (a + 1)..d.classes() {
            if counts[a] == 0 || counts[b] == 0 {
                continue;
            }
            let u: Vec<f64> = means[a].iter().zip(&means[b]).map(|(x, y)| x - y).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mid: Vec<f64> = means[a].iter().zip(&means[b]).map(|(x, y)| (x + y) / 2.0).collect();
            for i in 0..d.len() {
                let sign = match d.label(i) {
                    l if l == a => 1.0,
                    l if l == b => -1.0,
                    _ => continue,
                };
                let proj: f64 = d.image(i).iter().zip(&mid).zip(&u).map(|((x, m), w)| (x - m) * w).sum();
                worst = worst.min(sign * proj / norm);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_separated_in_two_dimensions() {
        let d = toy_blobs(&mut Rng::new(1), 50, 4, 2, 10.0).unwrap();
        assert_eq!(d.len(), 200);
        assert!(pairwise_margin(&d) > 0.5);
    }

    #[test]
    fn one_class_is_a_single_cluster() {
        let d = toy_blobs(&mut Rng::new(2), 20, 1, 3, 10.0).unwrap();
        assert!(d.labels().iter().all(|&l| l == 0));
        assert_eq!(pairwise_margin(&d), f64::INFINITY);
    }

    #[test]
    fn deterministic() {
        let a = toy_blobs(&mut Rng::new(3), 10, 3, 5, 8.0).unwrap();
        let b = toy_blobs(&mut Rng::new(3), 10, 3, 5, 8.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_nonpositive_separation() {
        assert!(toy_blobs(&mut Rng::new(4), 10, 3, 2, 0.0).is_err());
    }
}
