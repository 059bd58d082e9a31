//! Small fixed-size linear-algebra helpers for 3-D rigid motion.
//!
//! Rotations are 3×3 row-major matrices acting on column vectors
//! (`y = R · x`). Vectors are plain `[f64; 3]`. Everything here is
//! allocation-free and deterministic.

/// A 3-vector.
pub type Vec3 = [f64; 3];

/// A row-major 3×3 matrix. `m[r][c]` is row `r`, column `c`.
pub type Mat3 = [[f64; 3]; 3];

/// The identity matrix.
pub fn mat_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Matrix product `a · b`.
pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

/// Matrix transpose. For a rotation this is its inverse.
pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

/// Matrix-vector product `a · v`.
pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Determinant of a 3×3 matrix.
pub fn mat_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Component-wise `a + b`.
pub fn vec_add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Component-wise `a - b`.
pub fn vec_sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Scalar multiple `s · v`.
pub fn vec_scale(v: &Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Dot product.
pub fn vec_dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Euclidean norm.
pub fn vec_norm(v: &Vec3) -> f64 {
    vec_dot(v, v).sqrt()
}

/// How far `r` is from being a proper rotation: the largest absolute
/// entry of `rᵀr − I`, combined with `|det(r) − 1|`. Exactly zero for a
/// perfect rotation; callers compare against a tolerance.
pub fn rotation_deviation(r: &Mat3) -> f64 {
    let rtr = mat_mul(&mat_transpose(r), r);
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((rtr[i][j] - target).abs());
        }
    }
    dev.max((mat_det(r) - 1.0).abs())
}

/// Rotation by `angle` radians about the +x axis (right-handed).
pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Rotation by `angle` radians about the +y axis (right-handed).
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rotation by `angle` radians about the +z axis (right-handed).
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}
