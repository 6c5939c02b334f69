//! Sample-only access to a replica-surrogate edge-value matrix.

use crate::error::Error;
use crate::matching::reduce::{Algorithm, FinitePrior};
use crate::matching::Mat;
use crate::rng::{Session, SourceId, SourceRegistry};
use crate::sources::RealSource;
use crate::urns::{TypeRef, ValueTable};
use crate::Result;

/// `km` replicas × `m` surrogates with i.i.d. edge-value samples in `[0,1]`.
///
/// Synthetic instances draw Bernoulli noise around a fixed mean matrix.
/// Reduction instances hold actual replica/surrogate types and realize an
/// edge sample as "run the algorithm on the surrogate, evaluate the replica's
/// value on the outcome". Either way one edge sample is one metered draw.
pub struct MatchingInstance<'a> {
    m: usize,
    k: usize,
    source: SourceId,
    backend: Backend<'a>,
}

enum Backend<'a> {
    Synthetic {
        means: Mat,
    },
    Reduction {
        replicas: Vec<TypeRef>,
        surrogates: Vec<TypeRef>,
        alg: &'a dyn Algorithm,
        values: &'a ValueTable,
        prior: &'a FinitePrior,
    },
}

impl<'a> MatchingInstance<'a> {
    /// Synthetic instance: edge `(i,j)` samples Bernoulli with the given mean.
    pub fn synthetic(reg: &mut SourceRegistry, means: Mat, k: usize) -> Result<Self> {
        if k == 0 || means.cols() == 0 {
            return Err(Error::InvalidInput("need k >= 1 and m >= 1".into()));
        }
        if means.rows() != k * means.cols() {
            return Err(Error::InvalidInput(format!(
                "means must be (k*m) x m, got {}x{} with k={k}",
                means.rows(),
                means.cols()
            )));
        }
        Ok(MatchingInstance {
            m: means.cols(),
            k,
            source: reg.register("edges"),
            backend: Backend::Synthetic { means },
        })
    }

    /// Reduction instance over concrete replica and surrogate type profiles.
    pub fn reduction(
        reg: &mut SourceRegistry,
        replicas: Vec<TypeRef>,
        surrogates: Vec<TypeRef>,
        k: usize,
        alg: &'a dyn Algorithm,
        values: &'a ValueTable,
        prior: &'a FinitePrior,
    ) -> Result<Self> {
        let m = surrogates.len();
        if m == 0 || k == 0 || replicas.len() != k * m {
            return Err(Error::InvalidInput(format!(
                "need km = {} replicas for m={m}, k={k}",
                k * m
            )));
        }
        Ok(MatchingInstance {
            m,
            k,
            source: reg.register("edges"),
            backend: Backend::Reduction {
                replicas,
                surrogates,
                alg,
                values,
                prior,
            },
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.m * self.k
    }

    pub fn edge_source(&self) -> SourceId {
        self.source
    }

    pub fn replica(&self, i: usize) -> Option<&TypeRef> {
        match &self.backend {
            Backend::Synthetic { .. } => None,
            Backend::Reduction { replicas, .. } => replicas.get(i),
        }
    }

    pub fn surrogate(&self, j: usize) -> Option<&TypeRef> {
        match &self.backend {
            Backend::Synthetic { .. } => None,
            Backend::Reduction { surrogates, .. } => surrogates.get(j),
        }
    }

    /// One metered sample of the `(i,j)` edge value.
    pub fn sample_edge(&self, i: usize, j: usize, s: &mut Session) -> Result<f64> {
        if i >= self.rows() || j >= self.m {
            return Err(Error::InvalidInput(format!("edge ({i},{j}) out of range")));
        }
        s.meter(self.source)?;
        match &self.backend {
            Backend::Synthetic { means } => {
                Ok(f64::from(s.rng().bernoulli(means.get(i, j))))
            }
            Backend::Reduction {
                replicas,
                surrogates,
                alg,
                values,
                ..
            } => {
                let o = alg.sample_outcome(&surrogates[j], s)?;
                let v = values.value(&replicas[i], o)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ContractViolation(format!(
                        "edge value {v} outside [0,1]"
                    )));
                }
                Ok(v)
            }
        }
    }

    /// An independent instance with redrawn replicas and the same surrogates,
    /// for estimating the offline optimum without touching the live report.
    /// Synthetic instances keep their mean matrix (fresh noise only).
    pub fn redraw_replicas(&self, s: &mut Session) -> Result<MatchingInstance<'a>> {
        match &self.backend {
            Backend::Synthetic { means } => Ok(MatchingInstance {
                m: self.m,
                k: self.k,
                source: self.source,
                backend: Backend::Synthetic {
                    means: means.clone(),
                },
            }),
            Backend::Reduction {
                surrogates,
                alg,
                values,
                prior,
                ..
            } => {
                let fresh: Vec<TypeRef> = (0..self.rows())
                    .map(|_| prior.sample(s.rng()))
                    .collect();
                Ok(MatchingInstance {
                    m: self.m,
                    k: self.k,
                    source: self.source,
                    backend: Backend::Reduction {
                        replicas: fresh,
                        surrogates: surrogates.clone(),
                        alg: *alg,
                        values,
                        prior,
                    },
                })
            }
        }
    }

    /// Exact mean matrix, when the backend can expose one. Synthetic
    /// instances always can; reduction instances require an algorithm with a
    /// closed-form interim outcome distribution. Verification only.
    pub fn true_means(&self) -> Option<Mat> {
        match &self.backend {
            Backend::Synthetic { means } => Some(means.clone()),
            Backend::Reduction {
                replicas,
                surrogates,
                alg,
                values,
                ..
            } => {
                let mut means = Mat::zeros(self.rows(), self.m);
                for (j, sj) in surrogates.iter().enumerate() {
                    let dist = alg.outcome_dist(sj)?;
                    for (i, ri) in replicas.iter().enumerate() {
                        let mut v = 0.0;
                        for (o, p) in dist.iter().enumerate() {
                            if *p > 0.0 {
                                v += p * values.value(ri, o).ok()?;
                            }
                        }
                        means.set(i, j, v);
                    }
                }
                Some(means)
            }
        }
    }
}

/// `RealSource` view of a single edge, for building race coins.
pub struct EdgeSource<'i, 'a> {
    pub instance: &'i MatchingInstance<'a>,
    pub i: usize,
    pub j: usize,
}

impl RealSource for EdgeSource<'_, '_> {
    fn id(&self) -> SourceId {
        self.instance.edge_source()
    }

    fn draw(&self, s: &mut Session) -> Result<f64> {
        self.instance.sample_edge(self.i, self.j, s)
    }
}
