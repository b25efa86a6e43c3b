//! SSIM with an 11x11 Gaussian window (sigma 1.5) and the standard constants
//! C1 = 0.01^2, C2 = 0.03^2 on [0,1] images, averaged over channels. Only
//! centers whose window fits entirely inside the image contribute, so images
//! smaller than the window are rejected.

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn window_1d() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *wi = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *wi;
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    w
}

/// Separable valid convolution of one channel with the Gaussian window.
/// Output is (w-10) x (h-10).
fn conv_valid(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = window_1d();
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * src[y * w + x + j];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * horiz[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

struct ChannelStats {
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    s11: Vec<f64>,
    s22: Vec<f64>,
    s12: Vec<f64>,
    ow: usize,
    oh: usize,
}

fn channel_stats(a: &[f64], b: &[f64], w: usize, h: usize) -> ChannelStats {
    let sq1: Vec<f64> = a.iter().map(|v| v * v).collect();
    let sq2: Vec<f64> = b.iter().map(|v| v * v).collect();
    let pr: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu1 = conv_valid(a, w, h);
    let mu2 = conv_valid(b, w, h);
    let m11 = conv_valid(&sq1, w, h);
    let m22 = conv_valid(&sq2, w, h);
    let m12 = conv_valid(&pr, w, h);
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut s11 = vec![0.0; ow * oh];
    let mut s22 = vec![0.0; ow * oh];
    let mut s12 = vec![0.0; ow * oh];
    for i in 0..ow * oh {
        s11[i] = m11[i] - mu1[i] * mu1[i];
        s22[i] = m22[i] - mu2[i] * mu2[i];
        s12[i] = m12[i] - mu1[i] * mu2[i];
    }
    ChannelStats {
        mu1,
        mu2,
        s11,
        s22,
        s12,
        ow,
        oh,
    }
}

fn extract_channel(img: &[f64], ch: usize, channels: usize) -> Vec<f64> {
    img.iter().skip(ch).step_by(channels).copied().collect()
}

/// Mean SSIM over all valid window centers and channels.
pub fn ssim_mean(a: &[f64], b: &[f64], w: usize, h: usize, channels: usize) -> Option<f64> {
    if w < WINDOW || h < WINDOW || a.len() != w * h * channels || b.len() != a.len() {
        return None;
    }
    let mut total = 0.0;
    for ch in 0..channels {
        let ca = extract_channel(a, ch, channels);
        let cb = extract_channel(b, ch, channels);
        let st = channel_stats(&ca, &cb, w, h);
        let mut acc = 0.0;
        for i in 0..st.ow * st.oh {
            let a1 = 2.0 * st.mu1[i] * st.mu2[i] + C1;
            let a2 = 2.0 * st.s12[i] + C2;
            let b1 = st.mu1[i] * st.mu1[i] + st.mu2[i] * st.mu2[i] + C1;
            let b2 = st.s11[i] + st.s22[i] + C2;
            acc += (a1 * a2) / (b1 * b2);
        }
        total += acc / (st.ow * st.oh) as f64;
    }
    Some(total / channels as f64)
}

/// DSSIM = 1 - mean SSIM together with its gradient with respect to the
/// first image.
pub fn dssim_with_grad(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    channels: usize,
) -> Option<(f64, Vec<f64>)> {
    if w < WINDOW || h < WINDOW || a.len() != w * h * channels || b.len() != a.len() {
        return None;
    }
    let k1 = window_1d();
    let mut grad = vec![0.0; a.len()];
    let mut total = 0.0;
    for ch in 0..channels {
        let ca = extract_channel(a, ch, channels);
        let cb = extract_channel(b, ch, channels);
        let st = channel_stats(&ca, &cb, w, h);
        let ncent = (st.ow * st.oh) as f64;
        let mut acc = 0.0;
        for cy in 0..st.oh {
            for cx in 0..st.ow {
                let i = cy * st.ow + cx;
                let a1 = 2.0 * st.mu1[i] * st.mu2[i] + C1;
                let a2 = 2.0 * st.s12[i] + C2;
                let b1 = st.mu1[i] * st.mu1[i] + st.mu2[i] * st.mu2[i] + C1;
                let b2 = st.s11[i] + st.s22[i] + C2;
                let s = (a1 * a2) / (b1 * b2);
                acc += s;
                // dS/dA1 etc., then scatter through the window.
                let ds_da1 = a2 / (b1 * b2);
                let ds_da2 = a1 / (b1 * b2);
                let ds_db1 = -s / b1;
                let ds_db2 = -s / b2;
                let g_mu1 = ds_da1 * 2.0 * st.mu2[i] + ds_db1 * 2.0 * st.mu1[i];
                let g_s11 = ds_db2;
                let g_s12 = ds_da2 * 2.0;
                // Upstream: d(1 - meanS)/dS = -1/(ncent*channels).
                let up = -1.0 / (ncent * channels as f64);
                for wy in 0..WINDOW {
                    for wx in 0..WINDOW {
                        let px = cx + wx;
                        let py = cy + wy;
                        let wgt = k1[wx] * k1[wy];
                        let xp = ca[py * w + px];
                        let yp = cb[py * w + px];
                        let d = wgt
                            * (g_mu1
                                + 2.0 * (xp - st.mu1[i]) * g_s11
                                + (yp - st.mu2[i]) * g_s12);
                        grad[(py * w + px) * channels + ch] += up * d;
                    }
                }
            }
        }
        total += acc / ncent;
    }
    Some((1.0 - total / channels as f64, grad))
}
