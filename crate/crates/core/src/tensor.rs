//! Small dense tensors over generic scalars.
//!
//! The chart dimensions here are tiny (4, 8, or 12), so row-major `Vec` storage
//! with straightforward loops is both simple and fast enough. nalgebra is used
//! only at the `f64` level (decompositions); everything that must run inside the
//! dual tower goes through these types.

use crate::real::Real;

/// Square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SqMat<T> {
    pub d: usize,
    pub a: Vec<T>,
}

impl<T: Real> SqMat<T> {
    pub fn zeros(d: usize) -> Self {
        SqMat { d, a: vec![T::zero(); d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = T::one();
        }
        m
    }

    pub fn from_rows(d: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), d * d);
        SqMat { d, a: rows.iter().map(|&v| T::from_f64(v)).collect() }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.a[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.d + j] = v;
    }

    pub fn matmul(&self, o: &SqMat<T>) -> SqMat<T> {
        let d = self.d;
        let mut r = SqMat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let aik = self.a[i * d + k];
                for j in 0..d {
                    r.a[i * d + j] += aik * o.a[k * d + j];
                }
            }
        }
        r
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        let d = self.d;
        let mut r = vec![T::zero(); d];
        for i in 0..d {
            let mut s = T::zero();
            for j in 0..d {
                s += self.a[i * d + j] * v[j];
            }
            r[i] = s;
        }
        r
    }

    /// v^T M w (bilinear form value).
    pub fn bilinear(&self, v: &[T], w: &[T]) -> T {
        let d = self.d;
        let mut s = T::zero();
        for i in 0..d {
            let mut row = T::zero();
            for j in 0..d {
                row += self.a[i * d + j] * w[j];
            }
            s += v[i] * row;
        }
        s
    }

    pub fn trace(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.d {
            s += self.a[i * self.d + i];
        }
        s
    }

    pub fn transpose(&self) -> SqMat<T> {
        let d = self.d;
        let mut r = SqMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                r.a[j * d + i] = self.a[i * d + j];
            }
        }
        r
    }

    pub fn scale(&self, c: T) -> SqMat<T> {
        SqMat { d: self.d, a: self.a.iter().map(|&v| v * c).collect() }
    }

    pub fn add(&self, o: &SqMat<T>) -> SqMat<T> {
        SqMat {
            d: self.d,
            a: self.a.iter().zip(&o.a).map(|(&x, &y)| x + y).collect(),
        }
    }

    pub fn sub(&self, o: &SqMat<T>) -> SqMat<T> {
        SqMat {
            d: self.d,
            a: self.a.iter().zip(&o.a).map(|(&x, &y)| x - y).collect(),
        }
    }

    pub fn commutator(&self, o: &SqMat<T>) -> SqMat<T> {
        self.matmul(o).sub(&o.matmul(self))
    }

    /// Tr(self * o).
    pub fn trace_product(&self, o: &SqMat<T>) -> T {
        let d = self.d;
        let mut s = T::zero();
        for i in 0..d {
            for j in 0..d {
                s += self.a[i * d + j] * o.a[j * d + i];
            }
        }
        s
    }

    /// Solve self * X = rhs by Gaussian elimination with value-part pivoting.
    /// `rhs` holds `m` columns stacked row-major (d x m). Panics on a singular
    /// value part; chart-level inputs are always well-conditioned metrics.
    pub fn solve(&self, rhs: &[T], m: usize) -> Vec<T> {
        let d = self.d;
        assert_eq!(rhs.len(), d * m);
        let mut a = self.a.clone();
        let mut b = rhs.to_vec();
        for col in 0..d {
            let mut piv = col;
            let mut best = a[col * d + col].value().abs();
            for r in (col + 1)..d {
                let mag = a[r * d + col].value().abs();
                if mag > best {
                    best = mag;
                    piv = r;
                }
            }
            assert!(best > 0.0, "singular matrix in generic solve");
            if piv != col {
                for j in 0..d {
                    a.swap(col * d + j, piv * d + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, piv * m + j);
                }
            }
            let inv = T::one() / a[col * d + col];
            for r in 0..d {
                if r == col {
                    continue;
                }
                let f = a[r * d + col] * inv;
                for j in col..d {
                    let v = a[col * d + j];
                    a[r * d + j] -= f * v;
                }
                for j in 0..m {
                    let v = b[col * m + j];
                    b[r * m + j] -= f * v;
                }
            }
        }
        for col in 0..d {
            let inv = T::one() / a[col * d + col];
            for j in 0..m {
                b[col * m + j] = b[col * m + j] * inv;
            }
        }
        b
    }

    pub fn inverse(&self) -> SqMat<T> {
        let d = self.d;
        let id = SqMat::<T>::identity(d);
        SqMat { d, a: self.solve(&id.a, d) }
    }

    /// Largest absolute value of any entry's leading part.
    pub fn max_abs(&self) -> f64 {
        self.a.iter().map(|v| v.value().abs()).fold(0.0, f64::max)
    }
}

pub fn dot<T: Real>(u: &[T], v: &[T]) -> T {
    let mut s = T::zero();
    for (a, b) in u.iter().zip(v) {
        s += *a * *b;
    }
    s
}

pub fn axpy<T: Real>(acc: &mut [T], c: T, v: &[T]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += c * *b;
    }
}

pub fn scale_vec<T: Real>(v: &[T], c: T) -> Vec<T> {
    v.iter().map(|&x| x * c).collect()
}

pub fn sub_vec<T: Real>(u: &[T], v: &[T]) -> Vec<T> {
    u.iter().zip(v).map(|(&a, &b)| a - b).collect()
}

pub fn add_vec<T: Real>(u: &[T], v: &[T]) -> Vec<T> {
    u.iter().zip(v).map(|(&a, &b)| a + b).collect()
}

pub fn norm_sq<T: Real>(v: &[T]) -> T {
    dot(v, v)
}

pub fn max_abs_val<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.value().abs()).fold(0.0, f64::max)
}

/// Euclidean norm of the leading parts.
pub fn norm_f64<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.value() * x.value()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_inverse() {
        let m = SqMat::<f64>::from_rows(3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let inv = m.inverse();
        let id = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn commutator_antisymmetry() {
        let a = SqMat::<f64>::from_rows(2, &[0.0, 1.0, -1.0, 0.0]);
        let b = SqMat::<f64>::from_rows(2, &[1.0, 2.0, 3.0, 4.0]);
        let ab = a.commutator(&b);
        let ba = b.commutator(&a);
        for k in 0..4 {
            assert!((ab.a[k] + ba.a[k]).abs() < 1e-15);
        }
    }
}
