//! Differentiable rigid transforms of feature volumes.
//!
//! Conventions:
//! - rotation `R = Rz(θz)·Ry(θy)·Rx(θx)`, translation applied after rotation;
//! - normalized coordinates with aligned corners: voxel index 0 maps to -1 and
//!   index `n-1` maps to +1, rotation about the volume center;
//! - grid points are `(x, y, z)` with `x` running along W, `y` along H and
//!   `z` along D;
//! - backward warping: an output voxel at `p` reads the input at `Rᵀ(p - t)`;
//! - samples outside `[-1, 1]` read zero, decided per interpolation corner.

use crate::autodiff::{CustomOp, Element, Tensor, Var};
use crate::error::{Error, Result};

type M3<T> = [[T; 3]; 3];

fn mat3_mul<T: Element>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut c = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn rot_x<T: Element>(a: T) -> M3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

fn rot_y<T: Element>(a: T) -> M3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

fn rot_z<T: Element>(a: T) -> M3<T> {
    let (s, c, o, z) = (a.sin(), a.cos(), T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

fn d_rot_x<T: Element>(a: T) -> M3<T> {
    let (s, c, z) = (a.sin(), a.cos(), T::zero());
    [[z, z, z], [z, -s, -c], [z, c, -s]]
}

fn d_rot_y<T: Element>(a: T) -> M3<T> {
    let (s, c, z) = (a.sin(), a.cos(), T::zero());
    [[-s, z, c], [z, z, z], [-c, z, -s]]
}

fn d_rot_z<T: Element>(a: T) -> M3<T> {
    let (s, c, z) = (a.sin(), a.cos(), T::zero());
    [[-s, -c, z], [c, -s, z], [z, z, z]]
}

/// `Rz(θz)·Ry(θy)·Rx(θx)`.
pub fn euler_rotation<T: Element>(tx: T, ty: T, tz: T) -> [[T; 3]; 3] {
    mat3_mul(&rot_z(tz), &mat3_mul(&rot_y(ty), &rot_x(tx)))
}

/// Rotation about x, y or z (axis 0, 1, 2) by `angle`.
pub fn axis_rotation<T: Element>(axis: usize, angle: T) -> [[T; 3]; 3] {
    match axis {
        0 => rot_x(angle),
        1 => rot_y(angle),
        _ => rot_z(angle),
    }
}

/// A rotation followed by a translation, as a homogeneous 4×4 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    matrix: [[T; 4]; 4],
}

impl<T: Element> RigidTransform<T> {
    pub fn identity() -> Self {
        Self::from_params([T::zero(); 6])
    }

    /// Builds the transform from `(θx, θy, θz, tx, ty, tz)`.
    pub fn from_params(p: [T; 6]) -> Self {
        let r = euler_rotation(p[0], p[1], p[2]);
        Self::from_parts(r, [p[3], p[4], p[5]])
    }

    pub fn from_parts(r: [[T; 3]; 3], t: [T; 3]) -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        m[3][3] = T::one();
        RigidTransform { matrix: m }
    }

    pub fn matrix(&self) -> [[T; 4]; 4] {
        self.matrix
    }

    pub fn rotation(&self) -> [[T; 3]; 3] {
        let m = &self.matrix;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn translation(&self) -> [T; 3] {
        [self.matrix[0][3], self.matrix[1][3], self.matrix[2][3]]
    }

    /// Inverse rigid transform: `Rᵀ` and `-Rᵀt`.
    pub fn inverse(&self) -> Self {
        let r = self.rotation();
        let t = self.translation();
        let mut rt = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = r[j][i];
            }
        }
        let ti = std::array::from_fn(|i| -(0..3).map(|j| rt[i][j] * t[j]).sum::<T>());
        Self::from_parts(rt, ti)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let (a, b) = (&self.matrix, &other.matrix);
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        RigidTransform { matrix: m }
    }

    pub fn apply_point(&self, p: [T; 3]) -> [T; 3] {
        let m = &self.matrix;
        std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
    }

    pub fn determinant(&self) -> T {
        let r = self.rotation();
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// The top three rows, flattened, as consumed by [`affine_grid`].
    pub fn to_tensor(&self) -> Tensor<T> {
        let data = self.matrix[..3].iter().flatten().copied().collect();
        Tensor::new([1, 3, 4], data).expect("3x4 matrix")
    }
}

struct EulerOp;

impl<T: Element> CustomOp<T> for EulerOp {
    fn name(&self) -> &'static str {
        "euler_to_matrix"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let p = inputs[0].data();
        let mut dp = vec![T::zero(); p.len()];
        for (n, row) in p.chunks(6).enumerate() {
            let (ax, ay, az) = (row[0], row[1], row[2]);
            let (x, y, z) = (rot_x(ax), rot_y(ay), rot_z(az));
            let partials = [
                mat3_mul(&z, &mat3_mul(&y, &d_rot_x(ax))),
                mat3_mul(&z, &mat3_mul(&d_rot_y(ay), &x)),
                mat3_mul(&d_rot_z(az), &mat3_mul(&y, &x)),
            ];
            let gm = &g[n * 12..(n + 1) * 12];
            for (k, d) in partials.iter().enumerate() {
                dp[n * 6 + k] = (0..3)
                    .flat_map(|i| (0..3).map(move |j| (i, j)))
                    .map(|(i, j)| gm[i * 4 + j] * d[i][j])
                    .sum();
            }
            for i in 0..3 {
                dp[n * 6 + 3 + i] = gm[i * 4 + 3];
            }
        }
        Ok(vec![Some(dp)])
    }
}

/// Maps per-sample parameters `[N, 6]` = `(θx, θy, θz, tx, ty, tz)` to the
/// top three rows `[N, 3, 4]` of the rigid transform.
pub fn euler_to_matrix<'t, T: Element>(params: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = params.shape();
    if shape.len() != 2 || shape[1] != 6 {
        return Err(Error::shape("euler_to_matrix", &shape, &[0, 6]));
    }
    let n = shape[0];
    let out = params.with_value(|p| {
        let data = p
            .data()
            .chunks(6)
            .flat_map(|r| {
                let t = RigidTransform::from_params([r[0], r[1], r[2], r[3], r[4], r[5]]);
                t.to_tensor().into_data()
            })
            .collect();
        Tensor::new([n, 3, 4], data)
    })?;
    params.tape().custom(&[params], out, Box::new(EulerOp))
}

/// Normalized coordinate of index `i` on an axis of length `n`.
fn lattice<T: Element>(i: usize, n: usize) -> T {
    if n == 1 {
        T::zero()
    } else {
        T::from_usize(2 * i).unwrap() / T::from_usize(n - 1).unwrap() - T::one()
    }
}

fn lattice_points<T: Element>(dims: [usize; 3]) -> impl Iterator<Item = [T; 3]> {
    let [d, h, w] = dims;
    (0..d).flat_map(move |z| {
        (0..h).flat_map(move |y| (0..w).map(move |x| [lattice(x, w), lattice(y, h), lattice(z, d)]))
    })
}

struct AffineGridOp {
    dims: [usize; 3],
}

impl<T: Element> CustomOp<T> for AffineGridOp {
    fn name(&self) -> &'static str {
        "affine_grid"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let theta = inputs[0].data();
        let vox = self.dims.iter().product::<usize>();
        let mut dtheta = vec![T::zero(); theta.len()];
        for (n, m) in theta.chunks(12).enumerate() {
            let dm = &mut dtheta[n * 12..(n + 1) * 12];
            let t = [m[3], m[7], m[11]];
            for (v, p) in lattice_points::<T>(self.dims).enumerate() {
                let gs = &g[(n * vox + v) * 3..(n * vox + v) * 3 + 3];
                let q = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
                // src_i = sum_j R[j][i] * q_j
                for j in 0..3 {
                    let mut dq = T::zero();
                    for i in 0..3 {
                        dm[j * 4 + i] += gs[i] * q[j];
                        dq += m[j * 4 + i] * gs[i];
                    }
                    dm[j * 4 + 3] -= dq;
                }
            }
        }
        Ok(vec![Some(dtheta)])
    }
}

/// Sampling grid `[N, D, H, W, 3]` for transforms `[N, 3, 4]`: each output
/// voxel is mapped through the inverse transform.
pub fn affine_grid<'t, T: Element>(theta: Var<'t, T>, dims: [usize; 3]) -> Result<Var<'t, T>> {
    if dims.contains(&0) {
        return Err(Error::Argument(format!("affine_grid: zero output dimension in {dims:?}")));
    }
    let shape = theta.shape();
    if shape.len() != 3 || shape[1..] != [3, 4] {
        return Err(Error::shape("affine_grid", &shape, &[0, 3, 4]));
    }
    let n = shape[0];
    let vox = dims.iter().product::<usize>();
    let out = theta.with_value(|th| {
        let mut data = Vec::with_capacity(n * vox * 3);
        for m in th.data().chunks(12) {
            let t = [m[3], m[7], m[11]];
            for p in lattice_points::<T>(dims) {
                let q = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
                for i in 0..3 {
                    data.push(m[i] * q[0] + m[4 + i] * q[1] + m[8 + i] * q[2]);
                }
            }
        }
        Tensor::new([n, dims[0], dims[1], dims[2], 3], data)
    })?;
    theta.tape().custom(&[theta], out, Box::new(AffineGridOp { dims }))
}

/// The two interpolation corners along one axis: `(index, weight, dweight/dcoord)`.
/// Corners outside the volume have no index.
fn axis_corners<T: Element>(coord: T, n: usize) -> [(Option<usize>, T, T); 2] {
    let half = T::from_usize(n - 1).unwrap() / T::from_f64(2.0).unwrap();
    let u = (coord + T::one()) * half;
    let f0 = u.floor();
    let frac = u - f0;
    let i0 = f0.to_i64().unwrap_or(i64::MIN);
    let inside = |i: i64| (i >= 0 && i < n as i64).then_some(i as usize);
    [
        (inside(i0), T::one() - frac, -half),
        (inside(i0.saturating_add(1)), frac, half),
    ]
}

struct Stencil<T> {
    offset: usize,
    weight: T,
    dweight: [T; 3],
}

fn stencil<T: Element>(p: &[T], dims: [usize; 3], out: &mut Vec<Stencil<T>>) {
    let [d, h, w] = dims;
    out.clear();
    let cx = axis_corners(p[0], w);
    let cy = axis_corners(p[1], h);
    let cz = axis_corners(p[2], d);
    for &(iz, wz, dz) in &cz {
        for &(iy, wy, dy) in &cy {
            for &(ix, wx, dx) in &cx {
                if let (Some(x), Some(y), Some(z)) = (ix, iy, iz) {
                    out.push(Stencil {
                        offset: (z * h + y) * w + x,
                        weight: wx * wy * wz,
                        dweight: [dx * wy * wz, wx * dy * wz, wx * wy * dz],
                    });
                }
            }
        }
    }
}

struct GridSampleOp {
    vol_shape: Vec<usize>,
    out_dims: [usize; 3],
}

impl<T: Element> CustomOp<T> for GridSampleOp {
    fn name(&self) -> &'static str {
        "grid_sample_trilinear"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let (vol, grid) = (inputs[0].data(), inputs[1].data());
        let (n, c) = (self.vol_shape[0], self.vol_shape[1]);
        let in_dims = [self.vol_shape[2], self.vol_shape[3], self.vol_shape[4]];
        let in_vox: usize = in_dims.iter().product();
        let out_vox: usize = self.out_dims.iter().product();
        let mut dvol = needs[0].then(|| vec![T::zero(); vol.len()]);
        let mut dgrid = needs[1].then(|| vec![T::zero(); grid.len()]);
        let mut st = Vec::with_capacity(8);
        for b in 0..n {
            for v in 0..out_vox {
                let gi = (b * out_vox + v) * 3;
                stencil(&grid[gi..gi + 3], in_dims, &mut st);
                for ch in 0..c {
                    let base = (b * c + ch) * in_vox;
                    let d = g[(b * c + ch) * out_vox + v];
                    for s in &st {
                        if let Some(dv) = dvol.as_mut() {
                            dv[base + s.offset] += s.weight * d;
                        }
                        if let Some(dg) = dgrid.as_mut() {
                            let val = vol[base + s.offset] * d;
                            for k in 0..3 {
                                dg[gi + k] += s.dweight[k] * val;
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![dvol, dgrid])
    }
}

/// Trilinear resampling of `volume [N, C, D, H, W]` at `grid [N, D', H', W', 3]`,
/// giving `[N, C, D', H', W']`.
pub fn grid_sample_trilinear<'t, T: Element>(volume: Var<'t, T>, grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let vs = volume.shape();
    let gs = grid.shape();
    if vs.len() != 5 || gs.len() != 5 || gs[4] != 3 || gs[0] != vs[0] {
        return Err(Error::shape("grid_sample_trilinear", &vs, &gs));
    }
    let tape = volume.tape();
    let in_dims = [vs[2], vs[3], vs[4]];
    let out_dims = [gs[1], gs[2], gs[3]];
    let (n, c) = (vs[0], vs[1]);
    let in_vox: usize = in_dims.iter().product();
    let out_vox: usize = out_dims.iter().product();
    let out = {
        let vol = tape.value_ref(volume.id());
        let grid_t = tape.value_ref(grid.id());
        let grid_d = grid_t.data();
        if let Some(bad) = grid_d.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "grid_sample_trilinear: non-finite grid coordinate at flat index {bad}"
            )));
        }
        let vol = vol.data();
        let mut data = vec![T::zero(); n * c * out_vox];
        let mut st = Vec::with_capacity(8);
        for b in 0..n {
            for v in 0..out_vox {
                let gi = (b * out_vox + v) * 3;
                stencil(&grid_d[gi..gi + 3], in_dims, &mut st);
                for ch in 0..c {
                    let base = (b * c + ch) * in_vox;
                    data[(b * c + ch) * out_vox + v] =
                        st.iter().fold(T::zero(), |acc, s| acc + s.weight * vol[base + s.offset]);
                }
            }
        }
        Tensor::new([n, c, out_dims[0], out_dims[1], out_dims[2]], data)?
    };
    tape.custom(
        &[volume, grid],
        out,
        Box::new(GridSampleOp {
            vol_shape: vs,
            out_dims,
        }),
    )
}

/// Rigidly transforms `h [N, C, D, H, W]` by per-sample parameters `[N, 6]`.
pub fn transform_volume<'t, T: Element>(h: Var<'t, T>, params: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = h.shape();
    if s.len() != 5 {
        return Err(Error::shape("transform_volume", &s, &[0, 0, 0, 0, 0]));
    }
    let theta = euler_to_matrix(params)?;
    let grid = affine_grid(theta, [s[2], s[3], s[4]])?;
    grid_sample_trilinear(h, grid)
}
