//! Unnormalized target densities and the built-in benchmark zoo.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{Covariance, GaussianComponent, Mixture};

/// An unnormalized log-density `ln p̄(z)`.
///
/// `eval` must be deterministic and return a finite value or `-inf`; it is
/// called concurrently from worker threads during bank construction.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> f64;
}

/// Checked evaluation: dimension mismatch is an error and any NaN or `+inf`
/// produced by the target is reported rather than passed on.
pub fn log_density(target: &dyn TargetDensity, z: &[f64]) -> Result<f64> {
    check_dim(target.dim(), z.len())?;
    let v = target.eval(z);
    if v.is_nan() || v == f64::INFINITY {
        return Err(GmaError::NonFinite(format!("target returned {v}")));
    }
    Ok(v)
}

/// Wraps a closure as a target.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> TargetDensity for FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

impl TargetDensity for Mixture {
    fn dim(&self) -> usize {
        Mixture::dim(self)
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.log_pdf(z)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
}

/// Selects a zoo family by `name`; only `star` and `gmm-generic` carry parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZooSpec {
    ConnectedTrimodal,
    IsolatedTrimodal,
    #[serde(rename = "four-modal-2d")]
    FourModal2d,
    Moon,
    DoubleBanana,
    Wave,
    Funnel,
    Star {
        #[serde(default = "default_skewness")]
        skewness: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_arms")]
        arms: usize,
    },
    GmmGeneric {
        mixture: Mixture,
    },
}

fn default_skewness() -> f64 {
    100.0
}
fn default_radius() -> f64 {
    1.5
}
fn default_arms() -> usize {
    5
}

impl ZooSpec {
    pub fn star() -> Self {
        ZooSpec::Star {
            skewness: default_skewness(),
            radius: default_radius(),
            arms: default_arms(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ZooSpec::ConnectedTrimodal => "connected-trimodal",
            ZooSpec::IsolatedTrimodal => "isolated-trimodal",
            ZooSpec::FourModal2d => "four-modal-2d",
            ZooSpec::Moon => "moon",
            ZooSpec::DoubleBanana => "double-banana",
            ZooSpec::Wave => "wave",
            ZooSpec::Funnel => "funnel",
            ZooSpec::Star { .. } => "star",
            ZooSpec::GmmGeneric { .. } => "gmm-generic",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ZooSpec::ConnectedTrimodal | ZooSpec::IsolatedTrimodal => 1,
            ZooSpec::GmmGeneric { mixture } => mixture.dim(),
            _ => 2,
        }
    }

    /// The normalized mixture behind the family, when the family is one.
    pub fn exact_mixture(&self) -> Result<Option<Mixture>> {
        match self {
            ZooSpec::FourModal2d => four_modal().map(Some),
            ZooSpec::Star {
                skewness,
                radius,
                arms,
            } => star_mixture(*skewness, *radius, *arms).map(Some),
            ZooSpec::GmmGeneric { mixture } => Ok(Some(mixture.clone())),
            _ => Ok(None),
        }
    }
}

/// Builds a zoo target.
pub fn make_zoo_target(spec: &ZooSpec) -> Result<Arc<dyn TargetDensity>> {
    Ok(match spec {
        ZooSpec::ConnectedTrimodal => Arc::new(Trimodal::new(3.0, 0.25, 0.36)),
        ZooSpec::IsolatedTrimodal => Arc::new(Trimodal::new(5.0, 0.04, 0.04)),
        ZooSpec::Moon => Arc::new(FnTarget::new(2, |z: &[f64]| {
            let r = 10.0 * z[1] + 3.0 * z[0] * z[0] - 3.0;
            -0.5 * z[0] * z[0] - 0.5 * r * r
        })),
        ZooSpec::DoubleBanana => Arc::new(FnTarget::new(2, |z: &[f64]| {
            let ring = z[0] * z[0] + z[1] * z[1] - 3.0;
            let a = -2.0 * (z[0] - 2.0).powi(2);
            let b = -2.0 * (z[0] + 2.0).powi(2);
            let m = a.max(b);
            -2.0 * ring * ring + m + ((a - m).exp() + (b - m).exp()).ln()
        })),
        ZooSpec::Wave => Arc::new(FnTarget::new(2, |z: &[f64]| {
            let r = z[1] - (PI * z[0] / 2.0).sin();
            -r * r / (2.0 * 0.16)
        })),
        ZooSpec::Funnel => Arc::new(FnTarget::new(2, |z: &[f64]| {
            normal_logpdf(z[1], 0.0, 9.0) + normal_logpdf(z[0], 0.0, z[1].exp())
        })),
        ZooSpec::FourModal2d | ZooSpec::Star { .. } | ZooSpec::GmmGeneric { .. } => {
            Arc::new(spec.exact_mixture()?.expect("mixture family"))
        }
    })
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// Quartic central bump plus two weighted Gaussian side modes at ±offset.
#[derive(Debug, Clone)]
struct Trimodal {
    offset: f64,
    var_right: f64,
    var_left: f64,
}

impl Trimodal {
    fn new(offset: f64, var_right: f64, var_left: f64) -> Self {
        Self {
            offset,
            var_right,
            var_left,
        }
    }
}

impl TargetDensity for Trimodal {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let x = z[0];
        let q = x * x + 0.1 * x.powi(4);
        let terms = [
            -0.5 * q * q,
            0.3f64.ln() + normal_logpdf(x, self.offset, self.var_right),
            0.2f64.ln() + normal_logpdf(x, -self.offset, self.var_left),
        ];
        crate::gauss::logsumexp_unchecked(&terms)
    }
}

impl fmt::Debug for dyn TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TargetDensity(dim = {})", self.dim())
    }
}

fn full2(a: f64, b: f64, c: f64) -> Result<Covariance> {
    Covariance::full(DMatrix::from_row_slice(2, 2, &[a, b, b, c]))
}

fn four_modal() -> Result<Mixture> {
    let comps = vec![
        GaussianComponent::new(vec![-3.0, 3.0], full2(1.0, 0.8, 1.0)?)?,
        GaussianComponent::new(vec![3.0, 3.0], full2(1.0, -0.8, 1.0)?)?,
        GaussianComponent::new(vec![-3.0, -3.0], full2(1.0, 0.0, 0.2)?)?,
        GaussianComponent::new(vec![3.0, -3.0], full2(0.2, 0.0, 1.0)?)?,
    ];
    Mixture::new(comps, vec![0.3, 0.3, 0.2, 0.2])
}

/// Equal-weight arms: base mean `(radius, 0)` and covariance `diag(1, 1/skewness)`,
/// each arm rotated by `2π/arms` from the previous one.
fn star_mixture(skewness: f64, radius: f64, arms: usize) -> Result<Mixture> {
    if !(skewness.is_finite() && skewness > 0.0) {
        return Err(GmaError::InvalidParameter(format!(
            "star skewness must be > 0, got {skewness}"
        )));
    }
    if !radius.is_finite() {
        return Err(GmaError::InvalidParameter("star radius must be finite".into()));
    }
    if arms == 0 {
        return Err(GmaError::InvalidParameter("star needs at least one arm".into()));
    }
    let base = Matrix2::new(1.0, 0.0, 0.0, 1.0 / skewness);
    let mut comps = Vec::with_capacity(arms);
    for k in 0..arms {
        let phi = 2.0 * PI * k as f64 / arms as f64;
        let (s, c) = phi.sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        let cov = r * base * r.transpose();
        comps.push(GaussianComponent::new(
            vec![radius * c, radius * s],
            full2(cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)])?,
        )?);
    }
    Mixture::uniform(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zoo(spec: ZooSpec) -> Arc<dyn TargetDensity> {
        make_zoo_target(&spec).unwrap()
    }

    #[test]
    fn connected_trimodal_at_side_mode() {
        let t = zoo(ZooSpec::ConnectedTrimodal);
        // central term exp(-(9 + 8.1)^2 / 2) underflows; the right Gaussian sets the value
        let expected = 0.3 / (2.0 * PI * 0.25f64).sqrt()
            + 0.2 / (2.0 * PI * 0.36f64).sqrt() * (-36.0f64 / 0.72).exp();
        let v = t.eval(&[3.0]).exp();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.2394).abs() < 1e-4);
    }

    #[test]
    fn connected_trimodal_at_origin() {
        let t = zoo(ZooSpec::ConnectedTrimodal);
        let expected = 1.0
            + 0.3 * (-9.0f64 / 0.5).exp() / (2.0 * PI * 0.25f64).sqrt()
            + 0.2 * (-9.0f64 / 0.72).exp() / (2.0 * PI * 0.36f64).sqrt();
        let v = log_density(t.as_ref(), &[0.0]).unwrap();
        assert!((v - expected.ln()).abs() < 1e-14);
        assert!(v > 0.0 && v < 1e-5);
    }

    #[test]
    fn connected_trimodal_finite_on_interval() {
        let t = zoo(ZooSpec::ConnectedTrimodal);
        for i in 0..=20_000 {
            let x = -10.0 + i as f64 * 1e-3;
            assert!(t.eval(&[x]).is_finite(), "x = {x}");
        }
    }

    #[test]
    fn isolated_side_modes() {
        let t = zoo(ZooSpec::IsolatedTrimodal);
        let expected = 0.3 / (2.0 * PI * 0.04f64).sqrt();
        assert!((t.eval(&[5.0]).exp() - expected).abs() < 1e-12);
    }

    #[test]
    fn funnel_at_origin() {
        let t = zoo(ZooSpec::Funnel);
        let expected = 1.0 / (2.0 * PI * 9.0f64).sqrt() / (2.0 * PI).sqrt();
        assert!((t.eval(&[0.0, 0.0]).exp() - expected).abs() < 1e-15);
        assert!((expected - 0.05305).abs() < 1e-5);
    }

    #[test]
    fn closed_form_2d_families() {
        let moon = zoo(ZooSpec::Moon);
        assert!((moon.eval(&[1.0, 0.0]) - (-0.5)).abs() < 1e-15);
        let wave = zoo(ZooSpec::Wave);
        assert_eq!(wave.eval(&[1.0, 1.0]), 0.0);
        assert!((wave.eval(&[0.0, 0.4]) + 0.5).abs() < 1e-14);
        let banana = zoo(ZooSpec::DoubleBanana);
        let z = [2.0, 0.5];
        let ring = 4.0 + 0.25 - 3.0;
        let direct = (-2.0 * ring * ring) + (1.0 + (-32.0f64).exp()).ln();
        assert!((banana.eval(&z) - direct).abs() < 1e-14);
    }

    #[test]
    fn four_modal_layout() {
        let m = ZooSpec::FourModal2d.exact_mixture().unwrap().unwrap();
        assert_eq!(m.weights(), &[0.3, 0.3, 0.2, 0.2]);
        assert_eq!(m.components()[1].mean(), &[3.0, 3.0]);
        assert_eq!(m.components()[3].cov().to_dense()[(0, 0)], 0.2);
    }

    #[test]
    fn gmm_generic_standard_normal_mode() {
        for d in 1..=4 {
            let c = GaussianComponent::new(vec![0.5; d], Covariance::isotropic(d, 1.0).unwrap()).unwrap();
            let t = zoo(ZooSpec::GmmGeneric {
                mixture: Mixture::new(vec![c], vec![1.0]).unwrap(),
            });
            let v = t.eval(&vec![0.5; d]);
            assert!((v + 0.5 * d as f64 * (2.0 * PI).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn star_arm_one_on_positive_axis() {
        let spec = ZooSpec::star();
        let m = spec.exact_mixture().unwrap().unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.components()[0].mean(), &[1.5, 0.0]);
        let t = zoo(spec);
        let z = [1.5, 0.0];
        let direct = crate::gauss::logsumexp_unchecked(
            &m.components()
                .iter()
                .map(|c| 0.2f64.ln() + c.log_pdf(&z))
                .collect::<Vec<_>>(),
        );
        assert!((t.eval(&z) - direct).abs() < 1e-14);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let t = zoo(ZooSpec::Moon);
        assert!(matches!(
            log_density(t.as_ref(), &[0.0]),
            Err(GmaError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn spec_json_names() {
        let s: ZooSpec = serde_json::from_str(r#"{"name":"four-modal-2d"}"#).unwrap();
        assert_eq!(s.name(), "four-modal-2d");
        let s: ZooSpec = serde_json::from_str(r#"{"name":"star","skewness":50}"#).unwrap();
        assert!(matches!(s, ZooSpec::Star { arms: 5, .. }));
        assert!(serde_json::from_str::<ZooSpec>(r#"{"name":"rosenbrock"}"#).is_err());
        let bad = ZooSpec::Star {
            skewness: -1.0,
            radius: 1.5,
            arms: 5,
        };
        assert!(make_zoo_target(&bad).is_err());
    }

    #[test]
    fn gmm_generic_grid_mass() {
        let comps = vec![
            GaussianComponent::new(vec![0.0, 0.0], full2(0.5, 0.1, 0.3).unwrap()).unwrap(),
            GaussianComponent::new(vec![1.0, 1.0], Covariance::isotropic(2, 0.2).unwrap()).unwrap(),
        ];
        let t = zoo(ZooSpec::GmmGeneric {
            mixture: Mixture::new(comps, vec![0.5, 0.5]).unwrap(),
        });
        let h = 0.01;
        let mut mass = 0.0;
        for i in 0..800 {
            for j in 0..800 {
                let z = [-3.5 + (i as f64 + 0.5) * h, -3.5 + (j as f64 + 0.5) * h];
                mass += t.eval(&z).exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-4, "mass = {mass}");
    }

    proptest! {
        #[test]
        fn star_rotation_invariance(x in -4.0f64..4.0, y in -4.0f64..4.0) {
            let t = zoo(ZooSpec::star());
            let (s, c) = (2.0 * PI / 5.0).sin_cos();
            let rz = [c * x - s * y, s * x + c * y];
            prop_assert!((t.eval(&rz) - t.eval(&[x, y])).abs() <= 1e-9);
        }

        #[test]
        fn eval_is_deterministic(x in -8.0f64..8.0, y in -8.0f64..8.0) {
            for spec in [ZooSpec::Moon, ZooSpec::DoubleBanana, ZooSpec::Wave, ZooSpec::Funnel, ZooSpec::FourModal2d] {
                let t = zoo(spec);
                let a = t.eval(&[x, y]);
                prop_assert_eq!(a.to_bits(), t.eval(&[x, y]).to_bits());
                prop_assert!(!a.is_nan() && a != f64::INFINITY);
            }
        }
    }
}
