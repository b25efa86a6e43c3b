//! Adaptive-moment first-order optimizer used by tracking, mapping and BA.

/// Adam moments for one flat parameter group. Callers own the parameters;
/// `begin_step` advances the shared step counter, `update` returns the delta
/// to add to parameter `i`.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Grow the state for newly added parameters; fresh entries start with
    /// zero moments.
    pub fn ensure_len(&mut self, n: usize) {
        if n > self.m.len() {
            self.m.resize(n, 0.0);
            self.v.resize(n, 0.0);
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, i: usize, grad: f64, lr: f64) -> f64 {
        let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad;
        let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad;
        self.m[i] = m;
        self.v[i] = v;
        let t = self.t.max(1) as i32;
        let m_hat = m / (1.0 - self.beta1.powi(t));
        let v_hat = v / (1.0 - self.beta2.powi(t));
        -lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}
