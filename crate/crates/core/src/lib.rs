//! Generalization error and adversarial robustness (Dirichlet energy) of
//! two-layer networks fitted to a Gaussian quadratic target, in the
//! infinite-data limit: SGD endpoint, random features (plain, ridge, lazy),
//! the untrained network, and neural-tangent fits with and without the
//! initialization term.

pub mod activation;
pub mod audit;
pub mod error;
pub mod linalg;
pub mod model;
pub mod population;
pub mod quadrature;
pub mod regimes;
pub mod rng;
pub mod theory;

pub use activation::{ActivationProfile, Builtin, ScalarActivation, ScaleConstants};
pub use error::{Error, Result};
pub use model::{CovarianceDescriptor, EigenProfile, GroundTruth, NeuronEnsemble, SpectralSummary};
pub use population::{LinearizedMatrices, PopulationMatrices, RidgeResolvent};
pub use quadrature::GaussianIntegrator;
pub use regimes::{NtBasis, NtFit, Regime, RegimeEvaluation, RfProblem};
pub use theory::{PsiPair, TheoryInputs, TheoryPrediction};
