use std::fmt::Write as _;
use std::path::Path;

use basisfit::field::io::{CoefficientFile, NamedField};
use basisfit::optimize;
use basisfit::problems::ProblemId;

use crate::config::RunConfig;
use crate::output::{num, write_atomic, HistoryWriter};
use crate::report::{self, SweepReference};
use crate::CliError;

pub const COEFFICIENTS: &str = "coefficients.txt";
pub const METRICS: &str = "metrics.json";
pub const HISTORY: &str = "history.csv";
pub const SWEEP: &str = "sweep.csv";

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

pub fn solve(config: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let params = cfg.problem_params()?;
    let built = cfg.build(&params)?;
    let out = cfg.output_dir(output);
    let compiled = built.compile().map_err(|e| CliError::Config(e.to_string()))?;
    let mut history = HistoryWriter::new(out.join(HISTORY), &compiled.term_names());
    let x0 = vec![0.0; compiled.n_coeffs()];
    let result = optimize::run(&compiled, &x0, &built.optimizer, &mut |row| history.push(row));
    history.finish()?;
    let report = result.map_err(numerical)?;

    let fields = compiled.unpack(&report.x).map_err(numerical)?;
    let file = CoefficientFile {
        problem: Some(built.id.name().to_string()),
        domain: Some(built.domain.clone()),
        fields: fields
            .into_iter()
            .zip(built.spec.fields.iter().zip(&built.axes))
            .map(|(field, (decl, axes))| NamedField { name: decl.name.clone(), axes: axes.clone(), field })
            .collect(),
    };
    write_atomic(&out.join(COEFFICIENTS), &file.to_text())?;
    let doc = report::metrics_document(&built, &compiled, &report).map_err(numerical)?;
    let text = serde_json::to_string_pretty(&doc).map_err(numerical)?;
    write_atomic(&out.join(METRICS), &text)?;
    eprintln!(
        "{}: {:?} after {} iterations, loss {:.6e}; wrote {}",
        built.id,
        report.termination,
        report.iterations,
        report.final_loss(),
        out.display()
    );
    if report.termination.is_failure() {
        return Err(CliError::Numerical(format!("{:?}", report.termination)));
    }
    Ok(())
}

pub fn parse_modes(s: &str) -> Result<Vec<usize>, CliError> {
    let modes: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::Config(format!("--modes: '{t}' is not a mode count"))))
        .collect::<Result<_, _>>()?;
    if modes.is_empty() || modes.contains(&0) {
        return Err(CliError::Config("--modes: need positive mode counts".into()));
    }
    Ok(modes)
}

pub fn sweep(config: &Path, modes: &[usize], output: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let params = cfg.problem_params()?;
    let template = cfg.build(&params)?;
    let out = cfg.output_dir(output);
    let reference = SweepReference::new(&template, modes).map_err(numerical)?;
    let mut table = format!("# reference: {}\nmodes,l2,linf,iterations,termination\n", reference.description);
    let mut failed = 0;
    for &n in modes {
        let mut p = params.clone();
        p.modes = Some(n);
        p.field_modes.clear();
        let row = cfg.build(&p).and_then(|built| {
            let compiled = built.compile().map_err(numerical)?;
            let x0 = vec![0.0; compiled.n_coeffs()];
            let report = optimize::run(&compiled, &x0, &built.optimizer, &mut |_| {}).map_err(numerical)?;
            let (l2, linf) = reference.errors(&compiled, &report.x).map_err(numerical)?;
            Ok((l2, linf, report))
        });
        match row {
            Ok((l2, linf, report)) => {
                let status = match &report.termination {
                    t if t.is_failure() => {
                        failed += 1;
                        format!("{t:?}").replace(',', ";")
                    }
                    t => format!("{t:?}"),
                };
                let _ = writeln!(table, "{n},{},{},{},{status}", num(l2), num(linf), report.iterations);
                eprintln!("N={n}: L2 {l2:.3e}, Linf {linf:.3e}");
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(table, "{n},nan,nan,0,error: {}", e.to_string().replace([',', '\n'], ";"));
                eprintln!("N={n}: {e}");
            }
        }
        write_atomic(&out.join(SWEEP), &table)?;
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} sweep row(s) failed")));
    }
    Ok(())
}

/// One axis of an evaluation grid, `name:lo:hi:n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    fn value(&self, i: usize) -> f64 {
        if self.n == 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }
}

pub fn parse_grid(s: &str) -> Result<Vec<GridAxis>, CliError> {
    s.split(',')
        .map(|part| {
            let bad = || CliError::Config(format!("--grid: '{part}' is not name:lo:hi:n"));
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 4 || f[0].is_empty() {
                return Err(bad());
            }
            let lo: f64 = f[1].parse().map_err(|_| bad())?;
            let hi: f64 = f[2].parse().map_err(|_| bad())?;
            let n: usize = f[3].parse().map_err(|_| bad())?;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(bad());
            }
            Ok(GridAxis { name: f[0].to_string(), lo, hi, n })
        })
        .collect()
}

/// Grid points with the first axis varying slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let total: usize = axes.iter().map(|a| a.n).product();
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; axes.len()];
            for (d, a) in axes.iter().enumerate().rev() {
                p[d] = a.value(flat % a.n);
                flat /= a.n;
            }
            p
        })
        .collect()
}

fn read_coefficients(path: &Path) -> Result<CoefficientFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    CoefficientFile::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn eval_grid(coeffs: &Path, grid: &str, out: Option<&Path>) -> Result<(), CliError> {
    let file = read_coefficients(coeffs)?;
    let axes = parse_grid(grid)?;
    let names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
    let index = |n: &String| names.iter().position(|g| g == n);
    let used: Vec<(&NamedField, Vec<usize>)> = file
        .fields
        .iter()
        .filter_map(|f| f.axes.iter().map(index).collect::<Option<Vec<_>>>().map(|ix| (f, ix)))
        .collect();
    if used.is_empty() {
        return Err(CliError::Config(format!("--grid: no field is defined over axes {names:?}")));
    }
    let points = grid_points(&axes);
    let mut columns = Vec::new();
    for (f, ix) in &used {
        let pts: Vec<Vec<f64>> = points.iter().map(|p| ix.iter().map(|&i| p[i]).collect()).collect();
        let values = f
            .field
            .evaluate(&pts)
            .map_err(|e| CliError::Config(format!("field {}: grid leaves the basis box: {e}", f.name)))?;
        columns.push(values);
    }
    // domain membership is judged in the coordinate order of the first field
    let domain_order = &used[0].1;
    let mut text = names.join(",");
    for (f, _) in &used {
        let _ = write!(text, ",{}", f.name);
    }
    text.push_str(",in_domain\n");
    for (k, p) in points.iter().enumerate() {
        for v in p {
            let _ = write!(text, "{},", num(*v));
        }
        for c in &columns {
            let _ = write!(text, "{},", num(c[k]));
        }
        let inside = match &file.domain {
            Some(d) => d.contains(&domain_order.iter().map(|&i| p[i]).collect::<Vec<_>>()),
            None => true,
        };
        let _ = writeln!(text, "{}", inside as u8);
    }
    emit(out, &text)
}

pub fn parse_reshape(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("--reshape: '{s}' is not RxC"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

pub fn svd(coeffs: &Path, reshape: &str, field: Option<&str>, out: Option<&Path>) -> Result<(), CliError> {
    let file = read_coefficients(coeffs)?;
    let (rows, cols) = parse_reshape(reshape)?;
    let f = match field {
        Some(name) => file.field(name).ok_or_else(|| CliError::Config(format!("--field: no field '{name}'")))?,
        None => file.fields.first().ok_or_else(|| CliError::Config("coefficient file has no fields".into()))?,
    };
    let sv = f.field.coefficient_svd(rows, cols).map_err(|e| CliError::Config(e.to_string()))?;
    let mut text = String::from("index,singular_value\n");
    for (i, s) in sv.iter().enumerate() {
        let _ = writeln!(text, "{i},{}", num(*s));
    }
    emit(out, &text)
}

pub fn list_problems() -> String {
    let mut text = String::new();
    for id in ProblemId::ALL {
        let _ = writeln!(
            text,
            "{:<20} {:<7} {}",
            id.name(),
            basisfit::problems::default_optimizer(id).name(),
            id.description()
        );
    }
    text
}
