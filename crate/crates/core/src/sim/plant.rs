use num_complex::Complex64;

use crate::netsolve::{NetError, PhasorNetwork, Reduced};

use super::Scenario;

const CACHE: usize = 3;

/// Phasor plant with a small cache of Kron reductions keyed by load vector.
#[derive(Debug, Clone)]
pub struct Plant {
    network: PhasorNetwork<f64>,
    cache: Vec<(Vec<Complex64>, Reduced<f64>)>,
}

impl Plant {
    pub fn new(network: PhasorNetwork<f64>) -> Self {
        Self {
            network,
            cache: Vec::with_capacity(CACHE),
        }
    }

    pub fn network(&self) -> &PhasorNetwork<f64> {
        &self.network
    }

    pub fn reduced(&mut self, loads: &[Complex64]) -> Result<&Reduced<f64>, NetError> {
        if let Some(pos) = self.cache.iter().position(|(k, _)| k.as_slice() == loads) {
            return Ok(&self.cache[pos].1);
        }
        let red = self.network.reduce_with(loads)?;
        if self.cache.len() == CACHE {
            self.cache.remove(0);
        }
        self.cache.push((loads.to_vec(), red));
        Ok(&self.cache.last().expect("just pushed").1)
    }

    /// `(P, Q)` per inverter for source phasors `(V, δ)` during step `step`
    /// at stage time `t`.
    pub fn solve(&mut self, sc: &Scenario, step: i64, t: f64, sources: &[(f64, f64)]) -> Result<Vec<(f64, f64)>, NetError> {
        let loads = sc.loads_at(step, t);
        self.reduced(&loads)?.injections(sources)
    }
}
