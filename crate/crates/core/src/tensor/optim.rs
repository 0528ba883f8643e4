use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelBundle, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Update rule applied by [`Optimizer::step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Sgd,
    RmsProp,
    Adagrad,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Sgd => "sgd",
            Rule::RmsProp => "rmsprop",
            Rule::Adagrad => "adagrad",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Rule::Sgd),
            "rmsprop" => Ok(Rule::RmsProp),
            "adagrad" => Ok(Rule::Adagrad),
            other => Err(Error::invalid(format!("unknown optimizer rule `{other}`"))),
        }
    }
}

pub const RMSPROP_RHO: f64 = 0.9;
pub const EPSILON: f64 = 1e-8;

/// First-order optimizer with decoupled weight decay.
///
/// For every parameter `w` with gradient `g`:
///
/// ```text
/// sgd:      w <- w - lr*g                          - lr*wd*w
/// rmsprop:  v <- rho*v + (1-rho)*g^2;  w <- w - lr*g/(sqrt(v)+eps) - lr*wd*w
/// adagrad:  v <- v + g^2;              w <- w - lr*g/(sqrt(v)+eps) - lr*wd*w
/// ```
///
/// The decay term uses the pre-update value of `w`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    rule: Rule,
    lr: f64,
    weight_decay: f64,
    state: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(rule: Rule, lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::field("lr", format!("must be positive, got {lr}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::field(
                "weight_decay",
                format!("must be nonnegative, got {weight_decay}"),
            ));
        }
        Ok(Optimizer {
            rule,
            lr,
            weight_decay,
            state: Vec::new(),
            steps: 0,
        })
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.state.len() != store.len() {
            self.state = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        }
        let (lr, wd) = (self.lr, self.weight_decay);
        for (p, acc) in store.iter_mut().zip(&mut self.state) {
            let w = p.value.data_mut();
            for k in 0..w.len() {
                let g = p.grad[k];
                let update = match self.rule {
                    Rule::Sgd => g,
                    Rule::RmsProp => {
                        acc[k] = RMSPROP_RHO * acc[k] + (1.0 - RMSPROP_RHO) * g * g;
                        g / (acc[k].sqrt() + EPSILON)
                    }
                    Rule::Adagrad => {
                        acc[k] += g * g;
                        g / (acc[k].sqrt() + EPSILON)
                    }
                };
                w[k] = w[k] - lr * update - lr * wd * w[k];
            }
            p.grad.fill(0.0);
        }
        self.steps += 1;
    }

    /// Writes the accumulator state into `bundle` as `prefix + param name`.
    pub fn export(&self, store: &ParamStore, prefix: &str, bundle: &mut ModelBundle) {
        if self.state.is_empty() {
            return;
        }
        for (p, acc) in store.iter().zip(&self.state) {
            let t =
                Tensor::new(p.value.shape().to_vec(), acc.clone()).expect("state matches param");
            bundle.insert_tensor(format!("{prefix}{}", p.name), t);
        }
        bundle.set_meta(format!("{prefix}steps"), self.steps.to_string());
    }

    /// Restores state written by [`Optimizer::export`].
    pub fn import(&mut self, store: &ParamStore, prefix: &str, bundle: &ModelBundle) -> Result<()> {
        let steps_key = format!("{prefix}steps");
        let Some(steps) = bundle.meta(&steps_key) else {
            // never stepped before the checkpoint
            self.state.clear();
            self.steps = 0;
            return Ok(());
        };
        self.steps = steps.parse().map_err(|_| Error::Bundle {
            section: "metadata".into(),
            message: format!("bad `{steps_key}`"),
        })?;
        self.state = store
            .iter()
            .map(|p| {
                let key = format!("{prefix}{}", p.name);
                bundle
                    .tensor(&key)
                    .filter(|t| t.numel() == p.value.numel())
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Bundle {
                        section: format!("tensor {key}"),
                        message: "missing or mis-sized optimizer state".into(),
                    })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}
