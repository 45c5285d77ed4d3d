//! Gnuplot scripts for the emitted datasets.

/// One `plot` clause per selected channel, reading channel labels from column 2.
pub fn per_channel(data: &str, x: usize, y: usize, channels: &[usize]) -> Vec<String> {
    channels
        .iter()
        .map(|c| format!("'{data}' using {x}:(${c_col}=={c} ? ${y} : 1/0) with linespoints title 'channel {c}'", c_col = 2))
        .collect()
}

/// A script rendering `clauses` into `<stem>.png`.
pub fn script(stem: &str, title: &str, xlabel: &str, ylabel: &str, clauses: &[String]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set terminal pngcairo size 1000,700\n");
    s.push_str(&format!("set output '{stem}.png'\n"));
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str(&format!("set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"));
    s.push_str("set grid\n");
    s.push_str(&format!("plot {}\n", clauses.join(", \\\n     ")));
    s
}

/// A colour map of `(x, y, z)` rows.
pub fn heatmap(stem: &str, data: &str, title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 1000,700\n");
    s.push_str(&format!("set output '{stem}.png'\n"));
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str(&format!("set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"));
    s.push_str("set view map\nset palette rgbformulae 33,13,10\n");
    s.push_str(&format!("splot '{data}' every ::1 using 1:2:3 with points pointtype 5 pointsize 0.6 palette notitle\n"));
    s
}
