//! Server aggregation strategies.
//!
//! Every rule implements [`Aggregator`] over one flat parameter tensor and is
//! looked up by name in the registry, so configs and the CLI select the rule
//! at runtime. The plain rule replaces the master with the weighted client
//! mean; the adaptive rules treat `weighted_mean - master` as a
//! pseudo-gradient and apply a server-side optimizer with per-tensor state.

use super::FederationError;

/// Per-tensor optimizer state for the adaptive rules. Lazily sized; FedAvg
/// leaves it empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptState {
    fn ensure(&mut self, len: usize) {
        if self.m.len() != len {
            self.m = vec![0.0; len];
            self.v = vec![0.0; len];
        }
    }
}

/// Server-side hyperparameters shared by the adaptive rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorParams {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adapt_eps: f64,
}

impl Default for AggregatorParams {
    fn default() -> Self {
        Self { server_lr: 1.0, beta1: 0.9, beta2: 0.99, adapt_eps: 1e-3 }
    }
}

/// One aggregation rule over a flat parameter tensor.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Merges the weighted client tensors into `master` in place.
    /// `updates` pairs each client's tensor with its sample count; weights
    /// are normalized over the participants present in the slice.
    fn aggregate(
        &self,
        master: &mut [f64],
        state: &mut OptState,
        updates: &[(&[f64], f64)],
    ) -> Result<(), FederationError>;
}

fn check_updates(master: &[f64], updates: &[(&[f64], f64)]) -> Result<f64, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::EmptyUpdateSet);
    }
    for (tensor, _) in updates {
        if tensor.len() != master.len() {
            return Err(FederationError::ShapeMismatch {
                expected: master.len(),
                found: tensor.len(),
            });
        }
    }
    Ok(updates.iter().map(|&(_, w)| w).sum())
}

/// Sample-size-weighted parameter averaging.
pub struct FedAvg;

impl Aggregator for FedAvg {
    fn name(&self) -> &'static str {
        "fedavg"
    }

    fn aggregate(
        &self,
        master: &mut [f64],
        _state: &mut OptState,
        updates: &[(&[f64], f64)],
    ) -> Result<(), FederationError> {
        let total = check_updates(master, updates)?;
        for (p, x) in master.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(tensor, w) in updates {
                acc += (w / total) * tensor[p];
            }
            *x = acc;
        }
        Ok(())
    }
}

/// The second-moment recursions that distinguish the adaptive rules.
enum SecondMoment {
    Adagrad,
    Yogi,
    Adam,
}

fn adaptive_update(
    params: &AggregatorParams,
    rule: SecondMoment,
    master: &mut [f64],
    state: &mut OptState,
    updates: &[(&[f64], f64)],
) -> Result<(), FederationError> {
    let total = check_updates(master, updates)?;
    state.ensure(master.len());
    for (p, x) in master.iter_mut().enumerate() {
        let mut mean = 0.0;
        for &(tensor, w) in updates {
            mean += (w / total) * tensor[p];
        }
        let delta = mean - *x;
        let m = &mut state.m[p];
        let v = &mut state.v[p];
        *m = params.beta1 * *m + (1.0 - params.beta1) * delta;
        let d2 = delta * delta;
        match rule {
            SecondMoment::Adagrad => *v += d2,
            SecondMoment::Adam => *v = params.beta2 * *v + (1.0 - params.beta2) * d2,
            SecondMoment::Yogi => *v -= (1.0 - params.beta2) * d2 * (*v - d2).signum(),
        }
        *x += params.server_lr * *m / (v.sqrt() + params.adapt_eps);
    }
    Ok(())
}

pub struct FedAdagrad(pub AggregatorParams);

impl Aggregator for FedAdagrad {
    fn name(&self) -> &'static str {
        "fedadagrad"
    }

    fn aggregate(
        &self,
        master: &mut [f64],
        state: &mut OptState,
        updates: &[(&[f64], f64)],
    ) -> Result<(), FederationError> {
        adaptive_update(&self.0, SecondMoment::Adagrad, master, state, updates)
    }
}

pub struct FedYogi(pub AggregatorParams);

impl Aggregator for FedYogi {
    fn name(&self) -> &'static str {
        "fedyogi"
    }

    fn aggregate(
        &self,
        master: &mut [f64],
        state: &mut OptState,
        updates: &[(&[f64], f64)],
    ) -> Result<(), FederationError> {
        adaptive_update(&self.0, SecondMoment::Yogi, master, state, updates)
    }
}

pub struct FedAdam(pub AggregatorParams);

impl Aggregator for FedAdam {
    fn name(&self) -> &'static str {
        "fedadam"
    }

    fn aggregate(
        &self,
        master: &mut [f64],
        state: &mut OptState,
        updates: &[(&[f64], f64)],
    ) -> Result<(), FederationError> {
        adaptive_update(&self.0, SecondMoment::Adam, master, state, updates)
    }
}

type Factory = fn(&AggregatorParams) -> Box<dyn Aggregator>;

/// The strategy registry: rule name to constructor.
static REGISTRY: &[(&str, Factory)] = &[
    ("fedavg", |_| Box::new(FedAvg)),
    ("fedadagrad", |p| Box::new(FedAdagrad(*p))),
    ("fedyogi", |p| Box::new(FedYogi(*p))),
    ("fedadam", |p| Box::new(FedAdam(*p))),
];

/// Instantiates the aggregation rule registered under `name`
/// (case-insensitive).
pub fn create(name: &str, params: &AggregatorParams) -> Result<Box<dyn Aggregator>, FederationError> {
    let lower = name.to_lowercase();
    REGISTRY
        .iter()
        .find(|(n, _)| *n == lower)
        .map(|(_, factory)| factory(params))
        .ok_or_else(|| FederationError::UnknownAggregator {
            name: name.to_string(),
            known: names().join(", "),
        })
}

/// Registered rule names.
pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|&(n, _)| n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> AggregatorParams {
        AggregatorParams::default()
    }

    #[test]
    fn registry_lists_all_rules() {
        assert_eq!(names(), vec!["fedavg", "fedadagrad", "fedyogi", "fedadam"]);
        for name in names() {
            let agg = create(name, &params()).unwrap();
            assert_eq!(agg.name(), name);
        }
        assert!(create("FedAdam", &params()).is_ok());
        assert!(matches!(
            create("median", &params()),
            Err(FederationError::UnknownAggregator { .. })
        ));
    }

    #[test]
    fn fedavg_unweighted_mean() {
        let agg = create("fedavg", &params()).unwrap();
        let mut master = vec![0.0; 3];
        let mut state = OptState::default();
        let a = vec![2.0; 3];
        let b = vec![4.0; 3];
        agg.aggregate(&mut master, &mut state, &[(&a, 10.0), (&b, 10.0)]).unwrap();
        assert_eq!(master, vec![3.0; 3]);
    }

    /// Hand case: weights (1, 3), values (0, 4) -> 0*0.25 + 4*0.75 = 3.
    #[test]
    fn fedavg_weighted_hand_case() {
        let agg = create("fedavg", &params()).unwrap();
        let mut master = vec![0.0];
        let mut state = OptState::default();
        agg.aggregate(&mut master, &mut state, &[(&[0.0], 1.0), (&[4.0], 3.0)]).unwrap();
        assert!((master[0] - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn fedavg_identical_updates_fixpoint() {
        let agg = create("fedavg", &params()).unwrap();
        let update = vec![0.25, 1.5, 0.0, 7.25];
        let mut master = vec![9.0; 4];
        let mut state = OptState::default();
        agg.aggregate(&mut master, &mut state, &[(&update, 5.0), (&update, 3.0), (&update, 2.0)])
            .unwrap();
        assert_eq!(master, update);
    }

    #[test]
    fn empty_update_set_rejected() {
        for name in names() {
            let agg = create(name, &params()).unwrap();
            let mut master = vec![0.0];
            let mut state = OptState::default();
            assert!(matches!(
                agg.aggregate(&mut master, &mut state, &[]),
                Err(FederationError::EmptyUpdateSet)
            ));
        }
    }

    /// FedAdagrad scalar hand case: x=0, delta=1, m0=v0=0, beta1=0.9, lr=1,
    /// eps=1e-3 -> m=0.1, v=1, x=0.1/(1+1e-3).
    #[test]
    fn fedadagrad_scalar_hand_case() {
        let p = AggregatorParams { server_lr: 1.0, beta1: 0.9, beta2: 0.99, adapt_eps: 1e-3 };
        let agg = create("fedadagrad", &p).unwrap();
        let mut master = vec![0.0];
        let mut state = OptState::default();
        agg.aggregate(&mut master, &mut state, &[(&[1.0], 1.0)]).unwrap();
        assert!((state.m[0] - 0.1).abs() <= 1e-12);
        assert!((state.v[0] - 1.0).abs() <= 1e-12);
        assert!((master[0] - 0.1 / (1.0 + 1e-3)).abs() <= 1e-12);
        assert!((master[0] - 0.0999001).abs() <= 1e-7);
    }

    /// Zero pseudo-gradient with zero state leaves the master unchanged.
    /// Equal weights keep the weighted mean bit-exact.
    #[test]
    fn adaptive_zero_delta_is_noop() {
        for name in ["fedadagrad", "fedyogi", "fedadam"] {
            let agg = create(name, &params()).unwrap();
            let mut master = vec![0.5, 1.25, 3.0];
            let mut state = OptState::default();
            let update = master.clone();
            agg.aggregate(&mut master, &mut state, &[(&update, 4.0), (&update, 4.0)]).unwrap();
            assert_eq!(master, vec![0.5, 1.25, 3.0], "{name} moved on zero delta");
            agg.aggregate(&mut master, &mut state, &[(&update, 7.0)]).unwrap();
            assert_eq!(master, vec![0.5, 1.25, 3.0], "{name} moved on single-client zero delta");
        }
    }

    /// From v0 = 0, one step of FedAdam and FedYogi coincide: both second
    /// moments become (1-beta2) * delta^2.
    #[test]
    fn fedadam_fedyogi_coincide_after_first_step() {
        let p = params();
        for delta in [0.7, -1.3, 0.0] {
            let mut adam_master = vec![1.0];
            let mut yogi_master = vec![1.0];
            let mut adam_state = OptState::default();
            let mut yogi_state = OptState::default();
            let update = vec![1.0 + delta];
            create("fedadam", &p)
                .unwrap()
                .aggregate(&mut adam_master, &mut adam_state, &[(&update, 1.0)])
                .unwrap();
            create("fedyogi", &p)
                .unwrap()
                .aggregate(&mut yogi_master, &mut yogi_state, &[(&update, 1.0)])
                .unwrap();
            assert!((adam_state.v[0] - yogi_state.v[0]).abs() <= 1e-15);
            assert!((adam_master[0] - yogi_master[0]).abs() <= 1e-15);
            assert!((adam_state.v[0] - 0.01 * delta * delta).abs() <= 1e-15);
        }
    }

    #[test]
    fn adagrad_accumulates_v_monotonically() {
        let agg = create("fedadagrad", &params()).unwrap();
        let mut master = vec![0.0];
        let mut state = OptState::default();
        let mut prev_v = 0.0;
        for step in 0..5 {
            let update = vec![master[0] + 1.0];
            agg.aggregate(&mut master, &mut state, &[(&update, 1.0)]).unwrap();
            assert!(state.v[0] >= prev_v, "step {step}");
            prev_v = state.v[0];
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let agg = create("fedavg", &params()).unwrap();
        let mut master = vec![0.0; 2];
        let mut state = OptState::default();
        assert!(matches!(
            agg.aggregate(&mut master, &mut state, &[(&[1.0], 1.0)]),
            Err(FederationError::ShapeMismatch { .. })
        ));
    }
}
