use nalgebra::{DMatrix, DVector, Matrix3x2, Vector3};

use crate::geometry::Quat;
use crate::state::{KeyframeState, POS, ROT};

/// Parameterization of the first keyframe with its position and yaw removed.
///
/// The first orientation is written as `Rz(yaw) Ry(pitch) Rx(roll)`; only
/// roll and pitch remain free, so updates never change its yaw.
/// Reduced layout: `[v0, ba0, bg0, everything after keyframe 0, roll0, pitch0]`.
pub(crate) struct FirstFrameGauge {
    kept: Vec<usize>,
    /// Columns map `(droll, dpitch)` to the right-perturbation tangent.
    basis: Matrix3x2<f64>,
    yaw: f64,
    roll: f64,
    pitch: f64,
}

impl FirstFrameGauge {
    pub(crate) fn new(first: &KeyframeState, full_dim: usize) -> Self {
        let (roll, pitch, yaw) = first.orientation.euler_angles();
        let kept: Vec<usize> = (0..full_dim)
            .filter(|&i| !(POS..POS + 3).contains(&i) && !(ROT..ROT + 3).contains(&i))
            .collect();
        let (s, c) = roll.sin_cos();
        // Rx(roll)ᵀ e_y
        let pitch_axis = Vector3::new(0.0, c, -s);
        Self {
            kept,
            basis: Matrix3x2::from_columns(&[Vector3::x(), pitch_axis]),
            yaw,
            roll,
            pitch,
        }
    }

    pub(crate) fn reduced_dim(&self) -> usize {
        self.kept.len() + 2
    }

    pub(crate) fn reduce(&self, h: &DMatrix<f64>, g: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.kept.len();
        let mut hr = DMatrix::zeros(self.reduced_dim(), self.reduced_dim());
        let mut gr = DVector::zeros(self.reduced_dim());
        let hk = h.select_rows(&self.kept).select_columns(&self.kept);
        hr.view_mut((0, 0), (n, n)).copy_from(&hk);
        let h_k_rot = h.select_rows(&self.kept).columns(ROT, 3) * self.basis;
        hr.view_mut((0, n), (n, 2)).copy_from(&h_k_rot);
        hr.view_mut((n, 0), (2, n)).copy_from(&h_k_rot.transpose());
        let h_rr = self.basis.transpose() * h.fixed_view::<3, 3>(ROT, ROT) * self.basis;
        hr.fixed_view_mut::<2, 2>(n, n).copy_from(&h_rr);
        gr.rows_mut(0, n).copy_from(&g.select_rows(&self.kept));
        gr.fixed_rows_mut::<2>(n)
            .copy_from(&(self.basis.transpose() * g.fixed_rows::<3>(ROT)));
        (hr, gr)
    }

    /// Full-dimension increment for everything except the first orientation,
    /// whose increment is returned separately as `(droll, dpitch)`.
    pub(crate) fn expand(&self, dy: &DVector<f64>, full_dim: usize) -> (DVector<f64>, f64, f64) {
        let n = self.kept.len();
        let mut dx = DVector::zeros(full_dim);
        for (k, &i) in self.kept.iter().enumerate() {
            dx[i] = dy[k];
        }
        (dx, dy[n], dy[n + 1])
    }

    pub(crate) fn first_orientation(&self, droll: f64, dpitch: f64) -> Quat {
        Quat::from_euler_angles(self.roll + droll, self.pitch + dpitch, self.yaw)
    }
}
