//! RGB frames stored channel-major in `[0, 1]`.

use crate::geometry::Affine;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    /// `[3, h, w]`, row-major.
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(h: usize, w: usize) -> Self {
        Frame {
            h,
            w,
            data: vec![0.0; 3 * h * w],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    /// Alpha-blends `rgb` into pixel `(y, x)` with coverage `a`.
    #[inline]
    pub fn blend(&mut self, y: usize, x: usize, rgb: [f32; 3], a: f32) {
        let plane = self.h * self.w;
        let i = y * self.w + x;
        for (c, &v) in rgb.iter().enumerate() {
            let p = &mut self.data[c * plane + i];
            *p += a * (v - *p);
        }
    }

    /// Bilinear sample at continuous coordinates (pixel centers at
    /// `i + 0.5`); pixels outside the frame read as 0.
    pub fn sample(&self, x: f64, y: f64, out: &mut [f32; 3]) {
        let (fx, fy) = (x - 0.5, y - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = ((fx - x0) as f32, (fy - y0) as f32);
        let (x0, y0) = (x0 as i64, y0 as i64);
        *out = [0.0; 3];
        let plane = self.h * self.w;
        for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
            let yy = y0 + dy;
            if wy == 0.0 || yy < 0 || yy >= self.h as i64 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                let xx = x0 + dx;
                if wx == 0.0 || xx < 0 || xx >= self.w as i64 {
                    continue;
                }
                let i = yy as usize * self.w + xx as usize;
                let wgt = wy * wx;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += wgt * self.data[c * plane + i];
                }
            }
        }
    }

    /// Resamples into an `h × w` frame where output pixel `p` reads this
    /// frame at `dst_to_src(p)`.
    pub fn warp(&self, h: usize, w: usize, dst_to_src: &Affine) -> Frame {
        let mut out = Frame::new(h, w);
        let plane = h * w;
        let mut px = [0.0f32; 3];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = dst_to_src.apply(x as f64 + 0.5, y as f64 + 0.5);
                self.sample(sx, sy, &mut px);
                for (c, &v) in px.iter().enumerate() {
                    out.data[c * plane + y * w + x] = v;
                }
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.h * self.w;
        (0..plane)
            .flat_map(|i| (0..3).map(move |c| (c, i)))
            .map(|(c, i)| (self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}
