use ringsim::Problem;

use crate::experiment::Experiment;
use crate::CliError;

/// Per-client class counts of a softmax problem's Dirichlet partition, as CSV.
pub fn partition_table(exp: &Experiment) -> Result<String, CliError> {
    let Problem::Softmax(s) = &exp.problem else {
        return Err(CliError::Config("partition-demo needs a softmax problem".into()));
    };
    let p = s.partition();
    let classes = p.class_counts.first().map_or(0, Vec::len);
    let mut out = String::from("client");
    for c in 0..classes {
        out.push_str(&format!(",class_{c}"));
    }
    out.push_str(",total\n");
    for (j, counts) in p.class_counts.iter().enumerate() {
        out.push_str(&j.to_string());
        for c in counts {
            out.push_str(&format!(",{c}"));
        }
        out.push_str(&format!(",{}\n", counts.iter().sum::<usize>()));
    }
    Ok(out)
}
