//! Synthetic client datasets and corruption models.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::{sigmoid, LossKind};
use crate::seed;
use crate::ParamVector;

/// Ground-truth generating model shared by all normal clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueModel {
    pub p: usize,
    #[serde(serialize_with = "crate::serialize_vector")]
    pub theta0: ParamVector,
    pub noise_sd: f64,
    pub loss: LossKind,
}

impl TrueModel {
    /// `theta0` has its first `floor(0.2 p)` entries equal to one.
    pub fn new(p: usize, noise_sd: f64, loss: LossKind) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::invalid(format!("noise_sd {noise_sd} must be >= 0")));
        }
        Ok(TrueModel {
            p,
            theta0: leading_ones(p, p / 5),
            noise_sd,
            loss,
        })
    }

    pub fn sparsity(&self) -> usize {
        self.p / 5
    }
}

/// `(1_s, 0, ..., 0)` of length `p`.
pub fn leading_ones(p: usize, s: usize) -> ParamVector {
    DVector::from_fn(p, |i, _| if i < s { 1.0 } else { 0.0 })
}

/// Parameter that model-parameter-corrupted clients generate responses from:
/// the first `floor(0.1 p)` entries equal to one.
pub fn mp_theta(p: usize) -> ParamVector {
    leading_ones(p, p / 10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    None,
    /// Responses negated (labels flipped for logistic loss).
    Bf,
    /// Covariates shifted to `0.7 x + U(0,1)^p`.
    Ood,
    /// Responses generated from a different parameter.
    Mp,
}

impl Corruption {
    pub fn name(&self) -> &'static str {
        match self {
            Corruption::None => "none",
            Corruption::Bf => "bf",
            Corruption::Ood => "ood",
            Corruption::Mp => "mp",
        }
    }
}

/// What happens to the responses of an out-of-distribution client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodResponse {
    /// Responses stay tied to the original covariates.
    #[default]
    Keep,
    /// Responses are redrawn from the shifted covariates under `theta0`.
    Regenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: Corruption,
    pub rho: f64,
    #[serde(default)]
    pub ood_response: OodResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeterogeneityScheme {
    /// Per-client mean in U(-0.5, 0.5)^p and AR(1) covariance with
    /// correlation drawn from U(0.1, 0.9).
    #[default]
    #[serde(rename = "ar1-v1")]
    Ar1V1,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CovariateSpec {
    /// `x ~ N(0, I_p)` on every client.
    #[default]
    Homogeneous,
    Heterogeneous {
        #[serde(default)]
        scheme: HeterogeneityScheme,
    },
}

/// Local sample of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub abnormal: bool,
    pub corruption: Corruption,
}

impl ClientDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Dump as CSV with header `x1..xp,y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut cells: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            cells.push(self.y[i].to_string());
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Rows `idx` as a new dataset with the same identity.
    pub fn select_rows(&self, idx: &[usize]) -> ClientDataset {
        ClientDataset {
            client_id: self.client_id,
            x: self.x.select_rows(idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            abnormal: self.abnormal,
            corruption: self.corruption,
        }
    }

    fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.client_id as u64).to_le_bytes());
        hasher.update([self.abnormal as u8]);
        hasher.update(self.corruption.name().as_bytes());
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.p() as u64).to_le_bytes());
        for v in self.x.iter().chain(self.y.iter()) {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
}

/// SHA-256 fingerprint of a fleet of datasets, hex encoded.
pub fn fingerprint(datasets: &[ClientDataset]) -> String {
    let mut hasher = Sha256::new();
    for ds in datasets {
        ds.hash_into(&mut hasher);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Uniformly random set of `floor(rho * m)` abnormal clients.
pub fn assign_abnormal<R: Rng + ?Sized>(m: usize, rho: f64, rng: &mut R) -> Result<BTreeSet<usize>> {
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::invalid(format!("abnormal fraction {rho} outside [0, 0.5)")));
    }
    let k = (rho * m as f64).floor() as usize;
    Ok(sample(rng, m, k).into_iter().collect())
}

fn draw_responses<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    theta: &ParamVector,
    model: &TrueModel,
    rng: &mut R,
) -> DVector<f64> {
    let mean = x * theta;
    match model.loss {
        LossKind::SquaredError => mean.map(|mu| {
            let e: f64 = StandardNormal.sample(rng);
            mu + model.noise_sd * e
        }),
        LossKind::Logistic => mean.map(|eta| {
            let prob = sigmoid(eta);
            let coin = Bernoulli::new(prob).expect("sigmoid lies in [0, 1]");
            if coin.sample(rng) {
                1.0
            } else {
                0.0
            }
        }),
    }
}

fn standard_normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    // row-major draw order so that a prefix of rows does not depend on p
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(rng);
        }
    }
    x
}

/// Draw a clean client sample `y = x^T theta0 + eps`.
pub fn gen_client_data<R: Rng + ?Sized>(
    model: &TrueModel,
    cov: &CovariateSpec,
    n: usize,
    client_id: usize,
    rng: &mut R,
) -> Result<ClientDataset> {
    if n == 0 {
        return Err(Error::invalid("local sample size must be positive"));
    }
    let p = model.p;
    let x = match cov {
        CovariateSpec::Homogeneous => standard_normal_matrix(n, p, rng),
        CovariateSpec::Heterogeneous {
            scheme: HeterogeneityScheme::Ar1V1,
        } => {
            let shift = Uniform::new(-0.5, 0.5).expect("valid range");
            let mu: Vec<f64> = (0..p).map(|_| shift.sample(rng)).collect();
            let corr: f64 = Uniform::new(0.1, 0.9).expect("valid range").sample(rng);
            let innovation = (1.0 - corr * corr).sqrt();
            let z = standard_normal_matrix(n, p, rng);
            // stationary AR(1) along the feature index: unit variances and
            // correlation corr^|i-j|
            let mut x = DMatrix::zeros(n, p);
            for i in 0..n {
                let mut prev = z[(i, 0)];
                x[(i, 0)] = mu[0] + prev;
                for j in 1..p {
                    prev = corr * prev + innovation * z[(i, j)];
                    x[(i, j)] = mu[j] + prev;
                }
            }
            x
        }
    };
    let y = draw_responses(&x, &model.theta0, model, rng);
    Ok(ClientDataset {
        client_id,
        x,
        y,
        abnormal: false,
        corruption: Corruption::None,
    })
}

/// Apply a corruption to a client's data and mark it abnormal.
pub fn corrupt<R: Rng + ?Sized>(
    mut ds: ClientDataset,
    spec: &CorruptionSpec,
    model: &TrueModel,
    rng: &mut R,
) -> Result<ClientDataset> {
    match spec.kind {
        Corruption::None => {
            return Err(Error::invalid("cannot corrupt with kind `none`"));
        }
        Corruption::Bf => match model.loss {
            LossKind::SquaredError => ds.y.neg_mut(),
            LossKind::Logistic => ds.y.apply(|v| *v = 1.0 - *v),
        },
        Corruption::Ood => {
            let unit = Uniform::new(0.0, 1.0).expect("valid range");
            for i in 0..ds.n() {
                for j in 0..ds.p() {
                    ds.x[(i, j)] = 0.7 * ds.x[(i, j)] + unit.sample(rng);
                }
            }
            if spec.ood_response == OodResponse::Regenerate {
                ds.y = draw_responses(&ds.x, &model.theta0, model, rng);
            }
        }
        Corruption::Mp => {
            ds.y = draw_responses(&ds.x, &mp_theta(model.p), model, rng);
        }
    }
    ds.abnormal = true;
    ds.corruption = spec.kind;
    Ok(ds)
}

/// All clients of one simulated experiment.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub datasets: Vec<ClientDataset>,
    pub abnormal: BTreeSet<usize>,
}

impl Fleet {
    /// Generate `m` clients of size `n` from `seed`. Every client draws from
    /// its own stream, so the result does not depend on generation order.
    pub fn generate(
        model: &TrueModel,
        cov: &CovariateSpec,
        corruption: &CorruptionSpec,
        m: usize,
        n: usize,
        seed: u64,
    ) -> Result<Fleet> {
        if m == 0 {
            return Err(Error::invalid("client count must be positive"));
        }
        let abnormal = if corruption.kind == Corruption::None {
            assign_abnormal(m, 0.0, &mut seed::rng(0))?
        } else {
            assign_abnormal(m, corruption.rho, &mut seed::rng(seed::stream_seed(seed, "abnormal")))?
        };
        let datasets = (0..m)
            .map(|id| {
                let client = seed::client_seed(seed, id);
                let clean = gen_client_data(model, cov, n, id, &mut seed::rng(client))?;
                if abnormal.contains(&id) {
                    let mut rng = seed::rng(seed::stream_seed(client, "corrupt"));
                    corrupt(clean, corruption, model, &mut rng)
                } else {
                    Ok(clean)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Fleet { datasets, abnormal })
    }

    pub fn m(&self) -> usize {
        self.datasets.len()
    }

    pub fn n(&self) -> usize {
        self.datasets.first().map_or(0, |d| d.n())
    }

    pub fn total_samples(&self) -> usize {
        self.datasets.iter().map(|d| d.n()).sum()
    }

    pub fn is_abnormal(&self, m: usize) -> bool {
        self.abnormal.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn model(p: usize) -> TrueModel {
        TrueModel::new(p, 1.0, LossKind::SquaredError).unwrap()
    }

    #[test]
    fn theta0_has_leading_fifth_of_ones() {
        let m = model(10);
        assert_eq!(m.theta0.as_slice(), &[1., 1., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(model(50).theta0.norm_squared(), 10.0);
        let x = DVector::from_fn(10, |i, _| if i < 2 { 1.0 } else { 0.0 });
        assert_eq!(x.dot(&m.theta0), 2.0);
    }

    #[test]
    fn abnormal_assignment_sizes() {
        assert!(assign_abnormal(100, 0.0, &mut rng(1)).unwrap().is_empty());
        assert_eq!(assign_abnormal(100, 0.3, &mut rng(1)).unwrap().len(), 30);
        let a = assign_abnormal(10, 0.25, &mut rng(5)).unwrap();
        let b = assign_abnormal(10, 0.25, &mut rng(5)).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert!(assign_abnormal(10, 0.5, &mut rng(5)).is_err());
        assert!(assign_abnormal(10, -0.1, &mut rng(5)).is_err());
    }

    #[test]
    fn noiseless_responses_are_exact() {
        let m = TrueModel::new(6, 0.0, LossKind::SquaredError).unwrap();
        let ds = gen_client_data(&m, &CovariateSpec::Homogeneous, 20, 0, &mut rng(3)).unwrap();
        assert_eq!(ds.y, &ds.x * &m.theta0);
        assert!(!ds.abnormal);
    }

    #[test]
    fn homogeneous_sample_covariance_near_identity() {
        let m = model(50);
        let ds = gen_client_data(&m, &CovariateSpec::Homogeneous, 100, 0, &mut rng(42)).unwrap();
        let cov = ds.x.transpose() * &ds.x / 100.0;
        let diff = cov - DMatrix::<f64>::identity(50, 50);
        let dist = crate::spectral::symmetric_spectral_norm(&diff).unwrap();
        // Marchenko-Pastur edge for p/n = 0.5 is (1 + sqrt(0.5))^2 - 1 ~ 1.91;
        // the check is on the operator-norm scale of the fluctuation
        assert!(dist < 2.5, "{dist}");
        // entrywise mean-square deviation is ~1/n
        let frob2 = diff.norm_squared() / (50.0 * 50.0);
        assert!(frob2 < 0.02, "{frob2}");
    }

    #[test]
    fn bit_flip_negates_responses() {
        let m = model(2);
        let ds = ClientDataset {
            client_id: 4,
            x: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            y: DVector::from_vec(vec![1.5, -2.0]),
            abnormal: true,
            corruption: Corruption::None,
        };
        let spec = CorruptionSpec {
            kind: Corruption::Bf,
            rho: 0.1,
            ood_response: OodResponse::Keep,
        };
        let out = corrupt(ds.clone(), &spec, &m, &mut rng(0)).unwrap();
        assert_eq!(out.y.as_slice(), &[-1.5, 2.0]);
        assert_eq!(out.x, ds.x);
        assert_eq!(out.client_id, 4);
        assert_eq!(out.corruption, Corruption::Bf);
    }

    #[test]
    fn model_parameter_corruption_uses_theta_c() {
        assert_eq!(mp_theta(50).iter().filter(|&&v| v == 1.0).count(), 5);
        assert_eq!(mp_theta(50).as_slice()[..5], [1.0; 5]);
        let m = TrueModel::new(50, 0.0, LossKind::SquaredError).unwrap();
        let clean = gen_client_data(&m, &CovariateSpec::Homogeneous, 30, 0, &mut rng(9)).unwrap();
        let spec = CorruptionSpec {
            kind: Corruption::Mp,
            rho: 0.2,
            ood_response: OodResponse::Keep,
        };
        let out = corrupt(clean.clone(), &spec, &m, &mut rng(1)).unwrap();
        assert_eq!(out.y, &clean.x * mp_theta(50));
    }

    #[test]
    fn ood_of_zero_covariates_is_unit_uniform() {
        let m = model(4);
        let ds = ClientDataset {
            client_id: 0,
            x: DMatrix::zeros(25, 4),
            y: DVector::zeros(25),
            abnormal: true,
            corruption: Corruption::None,
        };
        for response in [OodResponse::Keep, OodResponse::Regenerate] {
            let spec = CorruptionSpec {
                kind: Corruption::Ood,
                rho: 0.1,
                ood_response: response,
            };
            let out = corrupt(ds.clone(), &spec, &m, &mut rng(2)).unwrap();
            assert!(out.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(out.n(), 25);
            assert_eq!(out.p(), 4);
            if response == OodResponse::Keep {
                assert_eq!(out.y, ds.y);
            }
        }
    }

    #[test]
    fn corrupt_rejects_none() {
        let m = model(4);
        let ds = gen_client_data(&m, &CovariateSpec::Homogeneous, 5, 0, &mut rng(0)).unwrap();
        let spec = CorruptionSpec {
            kind: Corruption::None,
            rho: 0.0,
            ood_response: OodResponse::Keep,
        };
        assert!(corrupt(ds, &spec, &m, &mut rng(0)).is_err());
    }

    #[test]
    fn logistic_bit_flip_flips_labels() {
        let m = TrueModel::new(3, 1.0, LossKind::Logistic).unwrap();
        let ds = gen_client_data(&m, &CovariateSpec::Homogeneous, 40, 0, &mut rng(8)).unwrap();
        assert!(ds.y.iter().all(|&v| v == 0.0 || v == 1.0));
        let spec = CorruptionSpec {
            kind: Corruption::Bf,
            rho: 0.1,
            ood_response: OodResponse::Keep,
        };
        let out = corrupt(ds.clone(), &spec, &m, &mut rng(0)).unwrap();
        assert_eq!(out.y, ds.y.map(|v| 1.0 - v));
    }

    #[test]
    fn fleet_generation_is_deterministic_and_consistent() {
        let m = model(10);
        let spec = CorruptionSpec {
            kind: Corruption::Bf,
            rho: 0.3,
            ood_response: OodResponse::Keep,
        };
        for cov in [
            CovariateSpec::Homogeneous,
            CovariateSpec::Heterogeneous {
                scheme: HeterogeneityScheme::Ar1V1,
            },
        ] {
            let a = Fleet::generate(&m, &cov, &spec, 20, 15, 77).unwrap();
            let b = Fleet::generate(&m, &cov, &spec, 20, 15, 77).unwrap();
            assert_eq!(fingerprint(&a.datasets), fingerprint(&b.datasets));
            assert_eq!(a.abnormal.len(), 6);
            for ds in &a.datasets {
                assert_eq!(ds.abnormal, a.abnormal.contains(&ds.client_id));
                assert_eq!(ds.abnormal, ds.corruption != Corruption::None);
                assert_eq!(ds.n(), 15);
            }
        }
    }

    #[test]
    fn heterogeneous_clients_differ_in_covariate_means() {
        let m = model(10);
        let cov = CovariateSpec::Heterogeneous {
            scheme: HeterogeneityScheme::Ar1V1,
        };
        let a = gen_client_data(&m, &cov, 2000, 0, &mut rng(1)).unwrap();
        let b = gen_client_data(&m, &cov, 2000, 1, &mut rng(2)).unwrap();
        let mean = |ds: &ClientDataset| ds.x.row_mean();
        let gap = (mean(&a) - mean(&b)).norm();
        assert!(gap > 0.2, "{gap}");
        // full-rank covariance
        let cov_a = a.x.transpose() * &a.x / 2000.0;
        assert!(crate::spectral::smallest_eigenvalue_psd(&cov_a).unwrap() > 0.01);
    }
}
