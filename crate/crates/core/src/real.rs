//! Scalar tower for forward-mode algorithmic differentiation.
//!
//! Every geometric field in this crate is written once, generically over [`Real`],
//! and can then be evaluated on plain floats or on nested dual numbers. A dual
//! number carries a single infinitesimal direction; nesting duals yields exact
//! higher directional derivatives (value and derivative parts stay stack-allocated
//! and `Copy` at every depth). The tower is capped at depth four, which is one more
//! than the deepest chain the verification suites need (metric -> Christoffels ->
//! connection form -> exterior derivative -> Lie derivative is depth three).

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// One level of the dual tower: `re + im * eps` with `eps^2 = 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub im: T,
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;
pub type D4 = Dual<D3>;

impl<T: Real> Dual<T> {
    #[inline]
    pub fn new(re: T, im: T) -> Self {
        Dual { re, im }
    }
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, im: T::zero() }
    }
}

impl<T: Real> fmt::Debug for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?} + {:?}e)", self.re, self.im)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.im + o.im)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.im - o.im)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.im + self.im * o.re)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.im - q * o.im) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.im)
    }
}

impl<T: Real> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

/// A chart-to-chart smooth map, object-safe, evaluable at every tower depth.
///
/// Implement [`ChartMapG`] instead (generic body written once); the blanket impl
/// provides the per-depth entry points used behind `dyn`.
pub trait ChartMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn ev0(&self, x: &[f64], out: &mut [f64]);
    fn ev1(&self, x: &[D1], out: &mut [D1]);
    fn ev2(&self, x: &[D2], out: &mut [D2]);
    fn ev3(&self, x: &[D3], out: &mut [D3]);
    fn ev4(&self, x: &[D4], out: &mut [D4]);
}

/// Generic-scalar evaluation body for a smooth map.
pub trait ChartMapG: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]);
}

impl<M: ChartMapG> ChartMap for M {
    fn dim_in(&self) -> usize {
        self.dims().0
    }
    fn dim_out(&self) -> usize {
        self.dims().1
    }
    fn ev0(&self, x: &[f64], out: &mut [f64]) {
        self.eval_g::<f64>(x, out)
    }
    fn ev1(&self, x: &[D1], out: &mut [D1]) {
        self.eval_g::<D1>(x, out)
    }
    fn ev2(&self, x: &[D2], out: &mut [D2]) {
        self.eval_g::<D2>(x, out)
    }
    fn ev3(&self, x: &[D3], out: &mut [D3]) {
        self.eval_g::<D3>(x, out)
    }
    fn ev4(&self, x: &[D4], out: &mut [D4]) {
        self.eval_g::<D4>(x, out)
    }
}

/// Scalar usable in generic geometric code: floats and nested duals.
pub trait Real:
    Copy
    + PartialEq
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    /// Leading (value) part, used for branching and pivoting.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// Evaluate a chart map at this tower depth.
    fn eval_map(m: &dyn ChartMap, x: &[Self], out: &mut [Self]);
    /// Directional derivative of a map at this depth, spending one extra tower
    /// level. Panics at the top depth, which exists only as derivative payload
    /// for the level below, never as a base for further differentiation. Needed
    /// by generic wrapper fields whose body contains a derivative; free code
    /// should prefer [`directional`], which enforces the cap at compile time.
    fn directional_dyn(m: &dyn ChartMap, x: &[Self], dir: &[Self]) -> Vec<Self>;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Self::one() / self.powi(-n);
        }
        let mut acc = Self::one();
        let mut base = self;
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            k >>= 1;
        }
        acc
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn eval_map(m: &dyn ChartMap, x: &[Self], out: &mut [Self]) {
        m.ev0(x, out)
    }
    #[inline]
    fn directional_dyn(m: &dyn ChartMap, x: &[Self], dir: &[Self]) -> Vec<Self> {
        directional::<f64>(m, x, dir)
    }
}

macro_rules! impl_real_dual {
    (@dir lift, $ty:ty) => {
        #[inline]
        fn directional_dyn(m: &dyn ChartMap, x: &[Self], dir: &[Self]) -> Vec<Self> {
            directional::<$ty>(m, x, dir)
        }
    };
    (@dir top, $ty:ty) => {
        fn directional_dyn(_m: &dyn ChartMap, _x: &[Self], _dir: &[Self]) -> Vec<Self> {
            panic!("dual tower depth cap exceeded: differentiate below the top level")
        }
    };
    ($ty:ty, $ev:ident, $kind:tt) => {
        impl Real for $ty {
            #[inline]
            fn from_f64(v: f64) -> Self {
                Dual::new(Real::from_f64(v), Real::zero())
            }
            #[inline]
            fn value(self) -> f64 {
                self.re.value()
            }
            #[inline]
            fn sin(self) -> Self {
                Dual::new(self.re.sin(), self.im * self.re.cos())
            }
            #[inline]
            fn cos(self) -> Self {
                Dual::new(self.re.cos(), -(self.im * self.re.sin()))
            }
            #[inline]
            fn exp(self) -> Self {
                let e = self.re.exp();
                Dual::new(e, self.im * e)
            }
            #[inline]
            fn ln(self) -> Self {
                Dual::new(self.re.ln(), self.im / self.re)
            }
            #[inline]
            fn sqrt(self) -> Self {
                let s = self.re.sqrt();
                Dual::new(s, self.im / (s + s))
            }
            #[inline]
            fn eval_map(m: &dyn ChartMap, x: &[Self], out: &mut [Self]) {
                m.$ev(x, out)
            }
            impl_real_dual!(@dir $kind, $ty);
        }
    };
}

impl_real_dual!(D1, ev1, lift);
impl_real_dual!(D2, ev2, lift);
impl_real_dual!(D3, ev3, lift);
impl_real_dual!(D4, ev4, top);

/// Scalars that may be lifted one level up the tower. Deliberately not implemented
/// for the top level, so code that would need depth five fails to compile.
pub trait Lift: Real {
    type Up: Real;
    fn up(re: Self, im: Self) -> Self::Up;
    fn down_re(u: Self::Up) -> Self;
    fn down_im(u: Self::Up) -> Self;
}

macro_rules! impl_lift {
    ($ty:ty) => {
        impl Lift for $ty {
            type Up = Dual<$ty>;
            #[inline]
            fn up(re: Self, im: Self) -> Self::Up {
                Dual::new(re, im)
            }
            #[inline]
            fn down_re(u: Self::Up) -> Self {
                u.re
            }
            #[inline]
            fn down_im(u: Self::Up) -> Self {
                u.im
            }
        }
    };
}

impl_lift!(f64);
impl_lift!(D1);
impl_lift!(D2);
impl_lift!(D3);

/// Exact directional derivative of `map` at `x` along `dir`:
/// returns d/dt map(x + t dir) at t = 0, one level down the tower.
pub fn directional<T: Lift>(map: &dyn ChartMap, x: &[T], dir: &[T]) -> Vec<T> {
    debug_assert_eq!(x.len(), dir.len());
    let lifted: Vec<T::Up> = x.iter().zip(dir).map(|(&a, &b)| T::up(a, b)).collect();
    let mut out = vec![T::Up::zero(); map.dim_out()];
    T::Up::eval_map(map, &lifted, &mut out);
    out.into_iter().map(T::down_im).collect()
}

/// Value and directional derivative in one evaluation.
pub fn value_and_directional<T: Lift>(
    map: &dyn ChartMap,
    x: &[T],
    dir: &[T],
) -> (Vec<T>, Vec<T>) {
    let lifted: Vec<T::Up> = x.iter().zip(dir).map(|(&a, &b)| T::up(a, b)).collect();
    let mut out = vec![T::Up::zero(); map.dim_out()];
    T::Up::eval_map(map, &lifted, &mut out);
    (
        out.iter().map(|&u| T::down_re(u)).collect(),
        out.iter().map(|&u| T::down_im(u)).collect(),
    )
}

/// Evaluate a map at any depth, allocating the output.
pub fn eval_vec<T: Real>(map: &dyn ChartMap, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); map.dim_out()];
    T::eval_map(map, x, &mut out);
    out
}

/// Full Jacobian columns at `x`: column `j` is the derivative along `e_j`.
pub fn jacobian_columns<T: Lift>(map: &dyn ChartMap, x: &[T]) -> Vec<Vec<T>> {
    let d = x.len();
    (0..d)
        .map(|j| {
            let mut dir = vec![T::zero(); d];
            dir[j] = T::one();
            directional(map, x, &dir)
        })
        .collect()
}

/// Wrap a plain function pointer pair as a chart map for small test fields.
pub struct FnMap<F> {
    pub dim_in: usize,
    pub dim_out: usize,
    pub f: F,
}

impl<F> ChartMapG for FnMap<F>
where
    F: GenericFn,
{
    fn dims(&self) -> (usize, usize) {
        (self.dim_in, self.dim_out)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        self.f.call(x, out)
    }
}

/// Object implementing a generic evaluation body; see [`FnMap`].
pub trait GenericFn: Send + Sync {
    fn call<T: Real>(&self, x: &[T], out: &mut [T]);
}
