use crate::error::{Error, Result};
use crate::grid::Point;
use crate::heatloc::nn::Tensor;
use crate::heatloc::Sample;

/// Network input: `3J + 1` channels of `N x N`, ordered
/// `[J radio maps | J constant measurement images | J one-hot BS images | city map]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub n_bs: usize,
    pub tensor: Tensor,
}

impl InputStack {
    pub fn channels(&self) -> usize {
        self.tensor.c
    }

    pub fn size(&self) -> usize {
        self.tensor.n
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.tensor.channel(c)
    }

    pub fn radio_map(&self, j: usize) -> &[f64] {
        self.channel(j)
    }

    pub fn measurement(&self, j: usize) -> &[f64] {
        self.channel(self.n_bs + j)
    }

    pub fn base_station(&self, j: usize) -> &[f64] {
        self.channel(2 * self.n_bs + j)
    }

    pub fn city(&self) -> &[f64] {
        self.channel(3 * self.n_bs)
    }
}

pub fn encode_inputs(sample: &Sample) -> Result<InputStack> {
    if let Some(p) = sample.p_meas.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!(
            "measured gray value {p} outside [0, 1]; convert and clip before encoding"
        )));
    }
    sample.validate()?;
    let j = sample.n_bs();
    let n = sample.city.size();
    let plane = n * n;
    let mut data = Vec::with_capacity((3 * j + 1) * plane);
    for r in sample.radio_maps_est.iter() {
        data.extend_from_slice(r.gray.as_slice());
    }
    for &p in &sample.p_meas {
        data.extend(std::iter::repeat_n(p, plane));
    }
    for &b in &sample.bs {
        let start = data.len();
        data.resize(start + plane, 0.0);
        data[start + sample.city.buildings.index(b)] = 1.0;
    }
    data.extend(
        sample
            .city
            .buildings
            .as_slice()
            .iter()
            .map(|&v| f64::from(v)),
    );
    Ok(InputStack {
        n_bs: j,
        tensor: Tensor::from_vec(3 * j + 1, n, data),
    })
}

/// Maps 1-based pixel coordinates under one of the 8 symmetries of the
/// square: bit 2 transposes, then bit 0 mirrors x and bit 1 mirrors y.
pub fn dihedral_point(p: Point, n: usize, d: u8) -> Point {
    let (mut x, mut y) = if d & 4 != 0 { (p.y, p.x) } else { (p.x, p.y) };
    let m = n as f64 + 1.0;
    if d & 1 != 0 {
        x = m - x;
    }
    if d & 2 != 0 {
        y = m - y;
    }
    Point::new(x, y)
}

/// Applies [`dihedral_point`]'s symmetry `d` to every channel. Pixel-wise
/// semantics (one-hot BS planes, constant planes) are preserved.
pub fn dihedral_stack(stack: &InputStack, d: u8) -> InputStack {
    let n = stack.size();
    let plane = n * n;
    let mut data = vec![0.0; stack.tensor.data.len()];
    for y in 0..n {
        for x in 0..n {
            let q = dihedral_point(Point::new((x + 1) as f64, (y + 1) as f64), n, d);
            let dst = (q.y as usize - 1) * n + (q.x as usize - 1);
            let src = y * n + x;
            for c in 0..stack.channels() {
                data[c * plane + dst] = stack.tensor.data[c * plane + src];
            }
        }
    }
    InputStack {
        n_bs: stack.n_bs,
        tensor: Tensor::from_vec(stack.channels(), n, data),
    }
}
