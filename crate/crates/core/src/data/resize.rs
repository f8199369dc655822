use shiftgate_nn::Tensor;

use super::Dataset;

/// Bilinear resize of an `[h, w, c]` image to `[size, size, c]` using
/// pixel-centre alignment.
pub fn resize_bilinear(image: &Tensor, size: usize) -> Tensor {
    let s = image.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    if h == size && w == size {
        return image.clone();
    }
    let src = image.data();
    let mut out = vec![0.0; size * size * c];
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    for y in 0..size {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..size {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[(y * size + x) * c + ch] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    Tensor::new(vec![size, size, c], out).expect("output sized from dims")
}

pub fn resize_dataset(ds: &Dataset, size: usize) -> Dataset {
    let mut out = ds.clone();
    out.images = ds.images.iter().map(|t| resize_bilinear(t, size)).collect();
    out
}
