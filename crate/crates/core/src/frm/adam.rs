use super::PriorContextBank;
use super::FrmTrainConfig;

/// First and second moment accumulators shaped like the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn for_bank(bank: &PriorContextBank) -> Self {
        Self::new(bank.contexts().len())
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &FrmTrainConfig) {
    assert_eq!(params.len(), grad.len(), "gradient shape");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(bank: &mut PriorContextBank, grad: &[f64], state: &mut AdamState, cfg: &FrmTrainConfig) {
    adam_update(bank.contexts_mut(), grad, state, cfg);
}
