use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Binary PPM (`P6`): hue follows direction, saturation follows magnitude
/// relative to `max_magnitude` (clamped), value is always full. Zero flow is white.
pub fn render_flow_image(flow: &FlowField, max_magnitude: f32) -> Result<Vec<u8>> {
    if !(max_magnitude > 0.0) {
        return Err(Error::Usage(format!("max magnitude must be positive, got {max_magnitude}")));
    }
    let (h, w) = (flow.height(), flow.width());
    let plane = h * w;
    let d = flow.values.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        out.extend_from_slice(&flow_color(d[i], d[plane + i], max_magnitude));
    }
    Ok(out)
}

/// RGB for one displacement; hue 0 (red) points along +x.
pub fn flow_color(u: f32, v: f32, max_magnitude: f32) -> [u8; 3] {
    let (u, v) = (u as f64, v as f64);
    let mag = u.hypot(v);
    let sat = (mag / max_magnitude as f64).clamp(0.0, 1.0);
    if !sat.is_finite() || sat == 0.0 {
        return [255, 255, 255];
    }
    let hue = v.atan2(u).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * 6.0;
    let sector = (hue.floor() as usize).min(5);
    let f = hue - sector as f64;
    let (p, q, t) = (1.0 - sat, 1.0 - sat * f, 1.0 - sat * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    let px = |c: f64| (c * 255.0).round() as u8;
    [px(r), px(g), px(b)]
}
