use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::domain::{Scenario, TrajectorySet};
use crate::error::{PdmError, Result};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    lo: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(scenario: &Scenario) -> Self {
        let b = &scenario.world_bounds;
        let span = (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]);
        let scale = (SIZE - 2.0 * MARGIN) / span;
        Self {
            lo: b.min,
            scale,
            height: (b.max[1] - b.min[1]) * scale + 2.0 * MARGIN,
        }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.lo[0]) * self.scale
    }

    // SVG y grows downwards.
    fn y(&self, v: f64) -> f64 {
        self.height - MARGIN - (v - self.lo[1]) * self.scale
    }

    fn width(&self, scenario: &Scenario) -> f64 {
        let b = &scenario.world_bounds;
        (b.max[0] - b.min[0]) * self.scale + 2.0 * MARGIN
    }
}

/// SVG drawing of an instance: obstacles as filled discs, starts as dashed
/// rings, goals as solid discs and one coloured polyline per agent.
pub fn render_svg(scenario: &Scenario, traj: Option<&TrajectorySet>) -> Result<String> {
    if let Some(t) = traj {
        scenario.check_trajectory_shape(t)?;
    }
    let f = Frame::new(scenario);
    let r = scenario.agent_radius * f.scale;
    let mut s = String::new();
    let w = f.width(scenario);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{:.2}" viewBox="0 0 {w:.2} {:.2}">"#,
        f.height, f.height
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        w - 2.0 * MARGIN,
        f.height - 2.0 * MARGIN
    );
    for o in &scenario.obstacles {
        let _ = writeln!(
            s,
            r##"<circle class="obstacle" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="#888"/>"##,
            f.x(o.center[0]),
            f.y(o.center[1]),
            o.radius * f.scale
        );
    }
    for a in 0..scenario.n_agents() {
        let colour = PALETTE[a % PALETTE.len()];
        if let Some(t) = traj {
            let points: Vec<String> = (0..t.horizon())
                .map(|h| {
                    let p = t.get(a, h);
                    format!("{:.3},{:.3}", f.x(p[0]), f.y(p[1]))
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="path" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                points.join(" ")
            );
        }
        let (b, e) = (scenario.starts[a], scenario.goals[a]);
        let _ = writeln!(
            s,
            r#"<circle class="start" cx="{:.3}" cy="{:.3}" r="{r:.3}" fill="none" stroke="{colour}" stroke-dasharray="4 3"/>"#,
            f.x(b[0]),
            f.y(b[1])
        );
        let _ = writeln!(
            s,
            r#"<circle class="goal" cx="{:.3}" cy="{:.3}" r="{r:.3}" fill="{colour}"/>"#,
            f.x(e[0]),
            f.y(e[1])
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot(traj: Option<&TrajectorySet>, scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(scenario, traj)?;
    fs::write(path.as_ref(), svg).map_err(PdmError::from)
}
