//! Self-check commands: pattern-space enumeration and gradient
//! verification. Both print stable single-purpose lines so scripts can
//! parse them without a JSON reader.

use imukey_core::passwords::apl_counts;
use imukey_core::trainer::{grad_check, grad_check_faulted, GradCheckReport, ModelKind};

use crate::{CliError, CliResult};

const GRAD_TOL: f64 = 1e-4;
const FAULT_FLOOR: f64 = 1e-2;

/// Count valid unlock patterns. The bare form prints the total; the
/// per-length form prints one `len count` row for lengths 4 through 9.
pub fn cmd_enum_apl(per_length: bool) -> String {
    let (total, by_len) = apl_counts();
    if !per_length {
        return format!("{total}\n");
    }
    let mut out = String::new();
    for (i, n) in by_len.iter().enumerate() {
        out.push_str(&format!("{} {n}\n", i + 4));
    }
    out.push_str(&format!("total {total}\n"));
    out
}

fn kinds_for(name: &str) -> CliResult<Vec<(ModelKind, &'static str)>> {
    match name {
        "seq2pwd" => Ok(vec![(ModelKind::Seq2Pwd, "seq2pwd")]),
        "seq2dgt" => Ok(vec![(ModelKind::Seq2Dgt, "seq2dgt")]),
        "both" => Ok(vec![
            (ModelKind::Seq2Pwd, "seq2pwd"),
            (ModelKind::Seq2Dgt, "seq2dgt"),
        ]),
        other => Err(CliError::Config(format!(
            "unknown model kind {other:?}; expected seq2pwd, seq2dgt, or both"
        ))),
    }
}

fn report_line(name: &str, report: &GradCheckReport, fault: bool) -> (String, bool) {
    let max = report.max_rel_err();
    let ok = if fault { max > FAULT_FLOOR } else { max < GRAD_TOL };
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = match (&report.fault, fault) {
        (Some(tensor), _) => format!(
            "{name} tensors {} max_rel_err {max:.1e} fault {tensor} {verdict}\n",
            report.per_tensor.len()
        ),
        (None, true) => format!(
            "{name} tensors {} max_rel_err {max:.1e} fault undetected {verdict}\n",
            report.per_tensor.len()
        ),
        (None, false) => format!(
            "{name} tensors {} max_rel_err {max:.1e} {verdict}\n",
            report.per_tensor.len()
        ),
    };
    (line, ok)
}

/// Compare analytic gradients with central differences. With `fault`
/// set, a deliberate sign error is injected and the check must notice
/// it; failing to notice is the failure.
pub fn cmd_gradcheck(kind: &str, fault: bool) -> CliResult<String> {
    let mut out = String::new();
    let mut all_ok = true;
    for (mk, name) in kinds_for(kind)? {
        let report = if fault {
            grad_check_faulted(mk)
        } else {
            grad_check(mk)
        }
        .map_err(|e| CliError::Data(e.to_string()))?;
        let (line, ok) = report_line(name, &report, fault);
        out.push_str(&line);
        all_ok &= ok;
    }
    if !all_ok {
        return Err(CliError::Data(format!("gradient check failed\n{out}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_enumeration_is_just_the_total() {
        assert_eq!(cmd_enum_apl(false), "389112\n");
    }

    #[test]
    fn per_length_rows_sum_to_the_total() {
        let out = cmd_enum_apl(true);
        let mut sum = 0u64;
        for line in out.lines() {
            let mut parts = line.split(' ');
            let label = parts.next().unwrap();
            let n: u64 = parts.next().unwrap().parse().unwrap();
            if label == "total" {
                assert_eq!(n, sum);
            } else {
                sum += n;
            }
        }
        assert_eq!(out.lines().count(), 7);
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        let err = cmd_gradcheck("seq2seq", false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
