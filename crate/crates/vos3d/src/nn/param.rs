use ndarray::ArrayD;

/// A trainable tensor together with its (lazily allocated) gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: Option<ArrayD<f64>>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        Param { value, grad: None }
    }

    /// Gradient buffer, allocated to zeros on first access.
    pub fn grad_mut(&mut self) -> &mut ArrayD<f64> {
        if self.grad.is_none() {
            self.grad = Some(ArrayD::zeros(self.value.raw_dim()));
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }
}

/// Walk over named parameters and buffers of a module tree.
///
/// Parameters are trainable; buffers (e.g. normalization running statistics)
/// are persisted in checkpoints but never receive gradients.
pub trait ParamSet {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param));
    fn visit_buffers<'a>(&'a self, _prefix: &str, _f: &mut dyn FnMut(String, &'a ArrayD<f64>)) {}
    fn visit_buffers_mut<'a>(
        &'a mut self,
        _prefix: &str,
        _f: &mut dyn FnMut(String, &'a mut ArrayD<f64>),
    ) {
    }
}

pub fn join_key(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total number of trainable scalar parameters in a module tree.
pub fn count_parameters(m: &impl ParamSet) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, p| n += p.value.len());
    n
}

pub fn named_params<'a>(m: &'a impl ParamSet) -> Vec<(String, &'a Param)> {
    let mut v = Vec::new();
    m.visit("", &mut |name, p| v.push((name, p)));
    v
}

pub fn named_params_mut<'a>(m: &'a mut impl ParamSet) -> Vec<(String, &'a mut Param)> {
    let mut v = Vec::new();
    m.visit_mut("", &mut |name, p| v.push((name, p)));
    v
}

pub fn named_buffers<'a>(m: &'a impl ParamSet) -> Vec<(String, &'a ArrayD<f64>)> {
    let mut v = Vec::new();
    m.visit_buffers("", &mut |name, b| v.push((name, b)));
    v
}

pub fn named_buffers_mut<'a>(m: &'a mut impl ParamSet) -> Vec<(String, &'a mut ArrayD<f64>)> {
    let mut v = Vec::new();
    m.visit_buffers_mut("", &mut |name, b| v.push((name, b)));
    v
}

pub fn zero_grads(m: &mut impl ParamSet) {
    m.visit_mut("", &mut |_, p| p.zero_grad());
}
