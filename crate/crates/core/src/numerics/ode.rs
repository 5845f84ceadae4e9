//! Dormand–Prince 5(4) stepping for small dense systems.

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Error-controlled Dormand–Prince stepper.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-14,
            h_max: f64::INFINITY,
        }
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    pub y_new: Vec<f64>,
    /// Derivative at the end of the last attempted step.
    pub dy_new: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            dy_new: vec![0.0; n],
        }
    }
}

impl Dopri5 {
    /// Attempts one step of size `h` from `(t, y)` with derivative `dy` at the start.
    /// Returns the scaled error norm; the step is acceptable when it is ≤ 1.
    pub fn attempt<F>(&self, f: &mut F, t: f64, y: &[f64], dy: &[f64], h: f64, ws: &mut Workspace) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        ws.k[0].copy_from_slice(dy);
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, a)) in stages.iter().enumerate() {
            for i in 0..n {
                let mut acc = y[i];
                for (j, aj) in a.iter().enumerate() {
                    acc += h * aj * ws.k[j][i];
                }
                ws.tmp[i] = acc;
            }
            let (_, tail) = ws.k.split_at_mut(s + 1);
            f(t + c * h, &ws.tmp, &mut tail[0]);
        }
        for i in 0..n {
            ws.y_new[i] = y[i]
                + h * (B1 * ws.k[0][i] + B3 * ws.k[2][i] + B4 * ws.k[3][i] + B5 * ws.k[4][i] + B6 * ws.k[5][i]);
        }
        f(t + h, &ws.y_new, &mut ws.k[6]);
        ws.dy_new.copy_from_slice(&ws.k[6]);
        let mut err = 0.0f64;
        for i in 0..n {
            let e = h
                * (E1 * ws.k[0][i]
                    + E3 * ws.k[2][i]
                    + E4 * ws.k[3][i]
                    + E5 * ws.k[4][i]
                    + E6 * ws.k[5][i]
                    + E7 * ws.k[6][i]);
            let sc = self.atol + self.rtol * y[i].abs().max(ws.y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        err
    }

    /// Step-size update from the error norm of the last attempt.
    pub fn next_step(&self, h: f64, err: f64) -> f64 {
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        (h * factor).min(self.h_max)
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1`, calling `observe` after every accepted step.
    pub fn integrate<F, O>(&self, mut f: F, t0: f64, y0: &[f64], t1: f64, h0: f64, mut observe: O) -> Vec<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        O: FnMut(f64, &[f64]),
    {
        let n = y0.len();
        let mut ws = Workspace::new(n);
        let mut y = y0.to_vec();
        let mut dy = vec![0.0; n];
        f(t0, &y, &mut dy);
        let mut t = t0;
        let dir = (t1 - t0).signum();
        let mut h = h0.abs().min(self.h_max) * dir;
        while (t1 - t) * dir > 0.0 {
            if (t + h - t1) * dir > 0.0 {
                h = t1 - t;
            }
            let err = self.attempt(&mut f, t, &y, &dy, h, &mut ws);
            if err <= 1.0 || h.abs() <= self.h_min {
                t += h;
                y.copy_from_slice(&ws.y_new);
                dy.copy_from_slice(&ws.dy_new);
                observe(t, &y);
            }
            h = self.next_step(h.abs(), err) * dir;
        }
        y
    }
}

/// Cubic Hermite interpolation between `(y0, dy0)` and `(y1, dy1)` over a step `h` at fraction `s`.
pub fn hermite(y0: f64, dy0: f64, y1: f64, dy1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * dy0 + h01 * y1 + h11 * h * dy1
}
