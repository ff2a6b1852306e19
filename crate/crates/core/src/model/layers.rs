use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Frames produced by a valid (unpadded) convolution.
pub fn conv_output_len(frames: usize, kernel: usize, stride: usize, dilation: usize) -> usize {
    let span = dilation * (kernel - 1) + 1;
    if frames < span {
        0
    } else {
        (frames - span) / stride + 1
    }
}

/// `ceil(frames / factor^layers)` for `frames >= 1`.
pub fn pyramid_output_len(frames: usize, factor: usize, layers: usize) -> usize {
    (0..layers).fold(frames, |n, _| n.div_ceil(factor))
}

/// Convolution weights already placed on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub weight: Var,
    pub bias: Var,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv {
    /// ReLU(conv(x)) over the time axis of a T×C input, as im2col + matmul.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let frames = tape.shape(x)[0];
        let channels = tape.shape(x)[1];
        let out_len = conv_output_len(frames, self.kernel, self.stride, self.dilation);
        let ids: Vec<usize> = (0..out_len)
            .flat_map(|t| (0..self.kernel).map(move |j| t * self.stride + j * self.dilation))
            .collect();
        let cols = tape.gather_rows(x, &ids)?;
        let cols = tape.reshape(cols, vec![out_len, self.kernel * channels])?;
        let y = tape.matmul(cols, self.weight)?;
        let y = tape.add(y, self.bias)?;
        Ok(tape.relu(y))
    }
}

/// LSTM weights already placed on a tape. Gate order is input, forget,
/// cell, output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lstm {
    pub wx: Var,
    pub wh: Var,
    pub bias: Var,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        let z = Tensor::zeros(vec![1, self.hidden]).expect("hidden >= 1");
        LstmState {
            h: tape.constant(z.clone()),
            c: tape.constant(z),
        }
    }

    /// One step given the already-projected input row `x·Wx + b` (1×4H).
    fn cell(&self, tape: &mut Tape, xw: Var, s: LstmState) -> Result<LstmState> {
        let hw = tape.matmul(s.h, self.wh)?;
        let gates = tape.add(xw, hw)?;
        let h = self.hidden;
        let i = tape.narrow(gates, 1, 0, h)?;
        let f = tape.narrow(gates, 1, h, h)?;
        let g = tape.narrow(gates, 1, 2 * h, h)?;
        let o = tape.narrow(gates, 1, 3 * h, h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, s.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// One step on an input row (1×D).
    pub fn step(&self, tape: &mut Tape, x: Var, s: LstmState) -> Result<LstmState> {
        let xw = tape.matmul(x, self.wx)?;
        let xw = tape.add(xw, self.bias)?;
        self.cell(tape, xw, s)
    }

    /// Run over every row of an L×D input from a zero state; returns L×H.
    pub fn sequence(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let len = tape.shape(x)[0];
        let xw = tape.matmul(x, self.wx)?;
        let xw = tape.add(xw, self.bias)?;
        let mut s = self.zero_state(tape);
        let mut outs = Vec::with_capacity(len);
        for t in 0..len {
            let row = tape.narrow(xw, 0, t, 1)?;
            s = self.cell(tape, row, s)?;
            outs.push(s.h);
        }
        tape.concat(&outs, 0)
    }
}
