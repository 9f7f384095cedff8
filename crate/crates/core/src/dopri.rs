//! Dormand–Prince 5(4) step with Hairer's fourth-order continuous extension,
//! specialised to a two-component state.

pub(crate) type State = [f64; 2];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub(crate) struct DenseStep {
    pub r0: f64,
    pub h: f64,
    rcont: [State; 5],
}

impl DenseStep {
    pub(crate) fn from_parts(r0: f64, h: f64, rcont: [State; 5]) -> Self {
        DenseStep { r0, h, rcont }
    }

    pub fn r1(&self) -> f64 {
        self.r0 + self.h
    }

    pub fn eval(&self, r: f64) -> State {
        let theta = ((r - self.r0) / self.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let rc = &self.rcont;
        let mut out = [0.0; 2];
        for i in 0..2 {
            out[i] = rc[0][i]
                + theta * (rc[1][i] + theta1 * (rc[2][i] + theta * (rc[3][i] + theta1 * rc[4][i])));
        }
        out
    }
}

pub(crate) struct StepResult {
    pub y1: State,
    pub k7: State,
    /// Weighted RMS error estimate; the step is acceptable when `<= 1`.
    pub err: f64,
    pub dense: DenseStep,
}

/// One trial step from `(r, y)` with first-stage slope `k1` (FSAL).
pub(crate) fn step<F: Fn(f64, &State) -> State>(
    rhs: &F,
    r: f64,
    y: &State,
    k1: &State,
    h: f64,
    atol: &State,
    rtol: f64,
) -> StepResult {
    let k2 = rhs(r + C2 * h, &axpy(y, &[(A21, k1)], h));
    let k3 = rhs(r + C3 * h, &axpy(y, &[(A31, k1), (A32, &k2)], h));
    let k4 = rhs(r + C4 * h, &axpy(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = rhs(
        r + C5 * h,
        &axpy(y, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
    );
    let k6 = rhs(
        r + h,
        &axpy(y, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
    );
    let y1 = axpy(
        y,
        &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        h,
    );
    let k7 = rhs(r + h, &y1);

    let mut err = 0.0;
    for i in 0..2 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = atol[i] + rtol * y[i].abs().max(y1[i].abs());
        err += (e / sc).powi(2);
    }
    let err = (0.5 * err).sqrt();

    let mut rcont = [[0.0; 2]; 5];
    for i in 0..2 {
        let ydiff = y1[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        rcont[0][i] = y[i];
        rcont[1][i] = ydiff;
        rcont[2][i] = bspl;
        rcont[3][i] = ydiff - h * k7[i] - bspl;
        rcont[4][i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    StepResult {
        y1,
        k7,
        err: if err.is_nan() { f64::INFINITY } else { err },
        dense: DenseStep { r0: r, h, rcont },
    }
}
