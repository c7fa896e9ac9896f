//! Real spherical harmonics up to degree 3, in the sign convention used by
//! common 3DGS checkpoints.

pub const SH_C0: f32 = 0.282_094_791_773_878_14;
const SH_C1: f32 = 0.488_602_511_902_919_9;
const SH_C2: [f32; 5] = [1.092_548_4, -1.092_548_4, 0.315_391_57, -1.092_548_4, 0.546_274_2];
const SH_C3: [f32; 7] = [-0.590_043_6, 2.890_611_4, -0.457_045_8, 0.373_176_34, -0.457_045_8, 1.445_305_7, -0.590_043_6];

/// Basis values for a unit direction; entries past `(degree+1)^2` are 0.
pub fn basis(degree: u8, dir: [f32; 3]) -> [f32; 16] {
    let [x, y, z] = dir;
    let mut b = [0.0f32; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// View-dependent RGB, offset by 0.5 and clamped to `[0, 1]`.
pub fn eval_color(degree: u8, sh: &[f32], dir: [f32; 3]) -> [f32; 3] {
    let b = basis(degree, dir);
    let n = (degree as usize + 1).pow(2);
    let mut rgb = [0.5f32; 3];
    for k in 0..n {
        for c in 0..3 {
            rgb[c] += b[k] * sh[3 * k + c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}
