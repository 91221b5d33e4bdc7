//! `imukey plot`: render a report CSV as a standalone SVG.
//!
//! The input is the CSV the attack and energy commands emit: a header
//! row naming the x column and one or more series, then numeric rows.
//! The output is plain SVG with no external references, so it opens in
//! a browser straight from disk.

use std::path::PathBuf;

use crate::{CliError, CliResult};

pub struct PlotArgs {
    pub data: PathBuf,
    pub out: PathBuf,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// Rates live in [0, 1]; the y axis is fixed so curves from different
/// runs compare directly. Out-of-range cells clamp rather than rescale.
const Y_MIN: f64 = 0.0;
const Y_MAX: f64 = 1.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str) -> CliResult<Table> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Data("empty csv".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(CliError::Data(
            "csv needs an x column and at least one series".into(),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Data(format!("csv row {}: bad number {c:?}", i + 2)))
            })
            .collect::<CliResult<_>>()?;
        if cells.len() != header.len() {
            return Err(CliError::Data(format!(
                "csv row {}: {} cells, header has {}",
                i + 2,
                cells.len(),
                header.len()
            )));
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(CliError::Data("csv has a header but no rows".into()));
    }
    Ok(Table { header, rows })
}

pub fn render_svg(table: &Table) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let xs: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let to_x = |x: f64| MARGIN_LEFT + (x - x_min) / x_span * plot_w;
    let to_y = |y: f64| {
        let y = y.clamp(Y_MIN, Y_MAX);
        MARGIN_TOP + (Y_MAX - y) / (Y_MAX - Y_MIN) * plot_h
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Horizontal grid and y labels at fixed 0.2 steps.
    for i in 0..=5 {
        let v = i as f64 * 0.2;
        let y = to_y(v);
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 4.0
        ));
    }

    // X ticks on the row values, thinned to at most ten labels.
    let step = xs.len().div_ceil(10).max(1);
    for (i, &x) in xs.iter().enumerate() {
        if i % step != 0 && i != xs.len() - 1 {
            continue;
        }
        let px = to_x(x);
        svg.push_str(&format!(
            "  <line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x}</text>\n",
            MARGIN_TOP + plot_h + 18.0
        ));
    }

    // Axes over the grid.
    svg.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        b = MARGIN_TOP + plot_h,
        r = MARGIN_LEFT + plot_w
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        table.header[0]
    ));

    for (s, name) in table.header.iter().enumerate().skip(1) {
        let color = PALETTE[(s - 1) % PALETTE.len()];
        let points: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", to_x(r[0]), to_y(r[s])))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 * s as f64;
        svg.push_str(&format!(
            "  <line x1=\"{x0:.2}\" y1=\"{ly:.2}\" x2=\"{x1:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            x0 = MARGIN_LEFT + plot_w - 150.0,
            x1 = MARGIN_LEFT + plot_w - 126.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\">{name}</text>\n",
            MARGIN_LEFT + plot_w - 120.0,
            ly + 4.0
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

pub fn run(args: &PlotArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let table = parse_csv(&text)?;
    let svg = render_svg(&table);
    std::fs::write(&args.out, svg)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    println!(
        "plotted {} series over {} rows to {}",
        table.header.len() - 1,
        table.rows.len(),
        args.out.display()
    );
    Ok(())
}
