use super::{argmax, softmax_cross_entropy, Model};
use crate::error::{Error, Result};
use crate::math::{ParamVector, SeededRng};

/// One stage of a feed-forward network. Dense layers flatten their input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Dense {
        units: usize,
    },
}

type Shape = (usize, usize, usize);

fn volume(s: Shape) -> usize {
    s.0 * s.1 * s.2
}

#[derive(Debug, Clone)]
struct Op {
    layer: Layer,
    input: Shape,
    output: Shape,
    w_off: usize,
    b_off: usize,
    fan_in: usize,
}

/// Sequential network over `channels × height × width` inputs ending in a
/// dense logit layer.
#[derive(Debug, Clone)]
pub struct Network {
    ops: Vec<Op>,
    input: Shape,
    classes: usize,
    params: usize,
    name: String,
}

impl Network {
    pub fn new(input: Shape, layers: &[Layer]) -> Result<Self> {
        if volume(input) == 0 {
            return Err(Error::InvalidArgument("network input must be non-empty".into()));
        }
        let mut ops = Vec::with_capacity(layers.len());
        let mut shape = input;
        let mut params = 0;
        let mut name = Vec::new();
        for &layer in layers {
            let (output, weights, biases, fan_in) = match layer {
                Layer::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                } => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidArgument(format!("degenerate layer {layer:?}")));
                    }
                    let (c, h, w) = shape;
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(Error::InvalidArgument(format!(
                            "kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    let oh = (h + 2 * pad - kernel) / stride + 1;
                    let ow = (w + 2 * pad - kernel) / stride + 1;
                    name.push(format!("conv{filters}x{kernel}s{stride}p{pad}"));
                    let fan_in = c * kernel * kernel;
                    ((filters, oh, ow), filters * fan_in, filters, fan_in)
                }
                Layer::MaxPool { size, stride } => {
                    let (c, h, w) = shape;
                    if size == 0 || stride == 0 || h < size || w < size {
                        return Err(Error::InvalidArgument(format!(
                            "pool {size}/{stride} does not fit input {h}x{w}"
                        )));
                    }
                    name.push(format!("pool{size}s{stride}"));
                    ((c, (h - size) / stride + 1, (w - size) / stride + 1), 0, 0, 0)
                }
                Layer::Relu => {
                    name.push("relu".into());
                    (shape, 0, 0, 0)
                }
                Layer::Dense { units } => {
                    if units == 0 {
                        return Err(Error::InvalidArgument("dense layer needs >= 1 unit".into()));
                    }
                    let n = volume(shape);
                    name.push(format!("fc{units}"));
                    ((1, 1, units), units * n, units, n)
                }
            };
            ops.push(Op {
                layer,
                input: shape,
                output,
                w_off: params,
                b_off: params + weights,
                fan_in,
            });
            params += weights + biases;
            shape = output;
        }
        match ops.last() {
            Some(Op {
                layer: Layer::Dense { units },
                ..
            }) => Ok(Network {
                classes: *units,
                ops,
                input,
                params,
                name: name.join("-"),
            }),
            _ => Err(Error::InvalidArgument("network must end in a dense layer".into())),
        }
    }

    /// Fully connected network with ReLU between layers.
    pub fn dense(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        for &units in hidden {
            layers.push(Layer::Dense { units });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense { units: classes });
        Network::new((1, 1, inputs), &layers)
    }

    /// 28×28 grayscale: two 16/32-filter conv stages with 2×2 stride-1 pooling,
    /// then a 32-unit hidden layer.
    pub fn mnist_cnn_layers(classes: usize) -> Vec<Layer> {
        vec![
            Layer::Conv { filters: 16, kernel: 8, stride: 2, pad: 2 },
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 1 },
            Layer::Conv { filters: 32, kernel: 4, stride: 2, pad: 2 },
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 1 },
            Layer::Dense { units: 32 },
            Layer::Relu,
            Layer::Dense { units: classes },
        ]
    }

    /// 32×32 RGB: three same-padded 3×3 conv stages (16, 16, 32 filters) with
    /// 2×2 stride-2 pooling, then a 128-unit hidden layer.
    pub fn cifar_cnn_layers(classes: usize) -> Vec<Layer> {
        let block = |filters| {
            [
                Layer::Conv { filters, kernel: 3, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::MaxPool { size: 2, stride: 2 },
            ]
        };
        let mut layers: Vec<Layer> = [16, 16, 32].into_iter().flat_map(block).collect();
        layers.extend([Layer::Dense { units: 128 }, Layer::Relu, Layer::Dense { units: classes }]);
        layers
    }

    pub fn output_shapes(&self) -> Vec<(usize, usize, usize)> {
        self.ops.iter().map(|op| op.output).collect()
    }

    /// Per-layer activations; `acts[0]` is the input, `acts[i + 1]` the output
    /// of op `i`. `arg` receives pooling argmax indices.
    fn forward(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>, arg: &mut Vec<Vec<usize>>) {
        acts.clear();
        arg.clear();
        acts.push(x.to_vec());
        for op in &self.ops {
            let input = acts.last().unwrap();
            let mut out = vec![0.0; volume(op.output)];
            let mut idx = Vec::new();
            match op.layer {
                Layer::Conv { kernel, stride, pad, .. } => {
                    conv_forward(op, kernel, stride, pad, params, input, &mut out)
                }
                Layer::MaxPool { size, stride } => {
                    idx = vec![0; out.len()];
                    pool_forward(op, size, stride, input, &mut out, &mut idx);
                }
                Layer::Relu => {
                    for (o, &v) in out.iter_mut().zip(input) {
                        *o = v.max(0.0);
                    }
                }
                Layer::Dense { units } => {
                    let n = input.len();
                    let nz: Vec<usize> = (0..n).filter(|&i| input[i] != 0.0).collect();
                    for (j, o) in out.iter_mut().enumerate().take(units) {
                        let row = &params[op.w_off + j * n..op.w_off + (j + 1) * n];
                        let mut s = params[op.b_off + j];
                        for &i in &nz {
                            s += row[i] * input[i];
                        }
                        *o = s;
                    }
                }
            }
            acts.push(out);
            arg.push(idx);
        }
    }

    fn backward(&self, params: &[f64], acts: &[Vec<f64>], arg: &[Vec<usize>], dlogits: Vec<f64>, grad: &mut [f64]) {
        let mut dout = dlogits;
        for (k, op) in self.ops.iter().enumerate().rev() {
            let input = &acts[k];
            let need_din = k > 0;
            let mut din = if need_din { vec![0.0; input.len()] } else { Vec::new() };
            match op.layer {
                Layer::Conv { kernel, stride, pad, .. } => {
                    conv_backward(op, kernel, stride, pad, params, input, &dout, grad, need_din.then_some(&mut din))
                }
                Layer::MaxPool { .. } => {
                    if need_din {
                        for (&a, &d) in arg[k].iter().zip(&dout) {
                            din[a] += d;
                        }
                    }
                }
                Layer::Relu => {
                    let out = &acts[k + 1];
                    for i in 0..din.len() {
                        if out[i] > 0.0 {
                            din[i] = dout[i];
                        }
                    }
                }
                Layer::Dense { .. } => {
                    let n = input.len();
                    let nz: Vec<usize> = (0..n).filter(|&i| input[i] != 0.0).collect();
                    for (j, &d) in dout.iter().enumerate() {
                        grad[op.b_off + j] = d;
                        if d == 0.0 {
                            continue;
                        }
                        let w = op.w_off + j * n;
                        for &i in &nz {
                            grad[w + i] = d * input[i];
                        }
                        if need_din {
                            let row = &params[w..w + n];
                            for (di, &wi) in din.iter_mut().zip(row) {
                                *di += d * wi;
                            }
                        }
                    }
                }
            }
            dout = din;
        }
    }
}

fn conv_forward(op: &Op, kernel: usize, stride: usize, pad: usize, params: &[f64], input: &[f64], out: &mut [f64]) {
    let (ic, ih, iw) = op.input;
    let (oc, oh, ow) = op.output;
    for o in 0..oc {
        let bias = params[op.b_off + o];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias;
                for c in 0..ic {
                    let wbase = op.w_off + ((o * ic + c) * kernel) * kernel;
                    for ky in 0..kernel {
                        let Some(iy) = (oy * stride + ky).checked_sub(pad).filter(|&y| y < ih) else {
                            continue;
                        };
                        for kx in 0..kernel {
                            let Some(ix) = (ox * stride + kx).checked_sub(pad).filter(|&x| x < iw) else {
                                continue;
                            };
                            s += params[wbase + ky * kernel + kx] * input[(c * ih + iy) * iw + ix];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    op: &Op,
    kernel: usize,
    stride: usize,
    pad: usize,
    params: &[f64],
    input: &[f64],
    dout: &[f64],
    grad: &mut [f64],
    mut din: Option<&mut Vec<f64>>,
) {
    let (ic, ih, iw) = op.input;
    let (oc, oh, ow) = op.output;
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let d = dout[(o * oh + oy) * ow + ox];
                grad[op.b_off + o] += d;
                if d == 0.0 {
                    continue;
                }
                for c in 0..ic {
                    let wbase = op.w_off + ((o * ic + c) * kernel) * kernel;
                    for ky in 0..kernel {
                        let Some(iy) = (oy * stride + ky).checked_sub(pad).filter(|&y| y < ih) else {
                            continue;
                        };
                        for kx in 0..kernel {
                            let Some(ix) = (ox * stride + kx).checked_sub(pad).filter(|&x| x < iw) else {
                                continue;
                            };
                            let xi = (c * ih + iy) * iw + ix;
                            let wi = wbase + ky * kernel + kx;
                            grad[wi] += d * input[xi];
                            if let Some(din) = din.as_deref_mut() {
                                din[xi] += d * params[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pool_forward(op: &Op, size: usize, stride: usize, input: &[f64], out: &mut [f64], idx: &mut [usize]) {
    let (c, ih, iw) = op.input;
    let (_, oh, ow) = op.output;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * ih + oy * stride) * iw + ox * stride;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = (ch * ih + oy * stride + ky) * iw + ox * stride + kx;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = input[best];
                idx[o] = best;
            }
        }
    }
}

impl Model for Network {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn param_count(&self) -> usize {
        self.params
    }

    fn input_len(&self) -> usize {
        volume(self.input)
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        let mut p = vec![0.0; self.params];
        for op in self.ops.iter().filter(|op| op.fan_in > 0) {
            let bound = 1.0 / (op.fan_in as f64).sqrt();
            let end = op.b_off + (op.b_off - op.w_off) / op.fan_in;
            for v in &mut p[op.w_off..end] {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        ParamVector::from_vec_unchecked(p)
    }

    fn loss(&self, params: &[f64], x: &[f64], label: usize) -> f64 {
        let (mut acts, mut arg) = (Vec::new(), Vec::new());
        self.forward(params, x, &mut acts, &mut arg);
        let logits = acts.last().unwrap();
        let mut probs = vec![0.0; logits.len()];
        softmax_cross_entropy(logits, label, &mut probs)
    }

    fn loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let (mut acts, mut arg) = (Vec::new(), Vec::new());
        self.forward(params, x, &mut acts, &mut arg);
        let logits = acts.last().unwrap();
        let mut dlogits = vec![0.0; logits.len()];
        let loss = softmax_cross_entropy(logits, label, &mut dlogits);
        dlogits[label] -= 1.0;
        self.backward(params, &acts, &arg, dlogits, grad);
        loss
    }

    fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let (mut acts, mut arg) = (Vec::new(), Vec::new());
        self.forward(params, x, &mut acts, &mut arg);
        argmax(acts.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::finite_diff_grad;

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    fn random_input(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn mnist_cnn_shapes_and_param_count() {
        let net = Network::new((1, 28, 28), &Network::mnist_cnn_layers(10)).unwrap();
        let shapes = net.output_shapes();
        assert_eq!(shapes[0], (16, 13, 13));
        assert_eq!(shapes[2], (16, 12, 12));
        assert_eq!(shapes[3], (32, 7, 7));
        assert_eq!(shapes[5], (32, 6, 6));
        let expected = (16 * 64 + 16) + (32 * 16 * 16 + 32) + (1152 * 32 + 32) + (32 * 10 + 10);
        assert_eq!(net.param_count(), expected);
        assert_eq!(net.param_count(), 46490);
    }

    #[test]
    fn cifar_cnn_shapes() {
        let net = Network::new((3, 32, 32), &Network::cifar_cnn_layers(10)).unwrap();
        let shapes = net.output_shapes();
        assert_eq!(shapes[8], (32, 4, 4));
        let expected = (16 * 27 + 16) + (16 * 144 + 16) + (32 * 144 + 32) + (512 * 128 + 128) + 1290;
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn zero_logistic_gives_ln2() {
        let net = Network::dense(5, &[], 2).unwrap();
        let params = vec![0.0; net.param_count()];
        let loss = net.loss(&params, &[0.3, -1.0, 2.0, 0.0, 4.0], 1);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_two_two_two_forward() {
        let net = Network::dense(2, &[2], 2).unwrap();
        // W1 = [[0.5, -1], [2, 0.25]], b1 = [0.1, -3], W2 = [[1, -2], [0.5, 3]], b2 = [0, 0.2]
        let params = [0.5, -1.0, 2.0, 0.25, 0.1, -3.0, 1.0, -2.0, 0.5, 3.0, 0.0, 0.2];
        let x = [1.0, 0.4];
        // hidden pre-activations: 0.5 - 0.4 + 0.1 = 0.2, 2 + 0.1 - 3 = -0.9 -> relu (0.2, 0)
        // logits: 0.2, 0.1 + 0.2 = 0.3
        let expected = (0.2f64.exp() + 0.3f64.exp()).ln() - 0.2;
        assert!((net.loss(&params, &x, 0) - expected).abs() < 1e-14);
        assert_eq!(net.predict(&params, &x), 1);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let cases = [
            Network::dense(6, &[], 3).unwrap(),
            Network::dense(6, &[5], 3).unwrap(),
            Network::new(
                (2, 6, 6),
                &[
                    Layer::Conv { filters: 3, kernel: 3, stride: 2, pad: 1 },
                    Layer::Relu,
                    Layer::MaxPool { size: 2, stride: 1 },
                    Layer::Dense { units: 4 },
                ],
            )
            .unwrap(),
        ];
        for net in &cases {
            for _ in 0..5 {
                let params = net.init_params(&mut rng);
                let x = random_input(&mut rng, net.input_len());
                let label = (rng.uniform() * net.classes() as f64) as usize;
                let mut g = vec![0.0; net.param_count()];
                net.loss_grad(&params, &x, label, &mut g);
                let fd = finite_diff_grad(net, &params, &x, label, 1e-5).unwrap();
                let err = max_rel_err(&g, &fd);
                assert!(err < 1e-4, "{}: {err}", net.describe());
            }
        }
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let net = Network::dense(100, &[4], 2).unwrap();
        let p = net.init_params(&mut SeededRng::new(1));
        assert!(p[..404].iter().all(|v| v.abs() <= 0.1));
        assert!(p[404..].iter().all(|v| v.abs() <= 0.5));
        assert!(p[..404].iter().any(|v| v.abs() > 0.09));
    }

    #[test]
    fn rejects_malformed_layouts() {
        assert!(Network::new((1, 4, 4), &[Layer::Relu]).is_err());
        assert!(Network::new((1, 2, 2), &[Layer::MaxPool { size: 3, stride: 1 }, Layer::Dense { units: 2 }]).is_err());
        assert!(Network::dense(3, &[0], 2).is_err());
    }
}
