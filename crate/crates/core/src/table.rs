//! Policy files: a one-line parameter header followed by a CSV table keyed by
//! dense state index.
//!
//! ```text
//! # qaoi-policy tq=2 epsilon=0.5 mu_b=0.5 delta_max=3 bucket=1 discount=0.75 objective=qapa
//! index,age,sigma,tokens,action,value
//! 0,1,0,0,0,1.25
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mdp::{Action, ModelParams, Objective};
use crate::solver::{Policy, ValueFunction};

const MAGIC: &str = "# qaoi-policy";
pub const POLICY_HEADER: &str = "index,age,sigma,tokens,action,value";

/// Contents of a policy file.
#[derive(Debug, Clone)]
pub struct PolicyFile {
    pub params: ModelParams,
    pub objective: Objective,
    pub policy: Policy,
    pub values: ValueFunction,
}

pub fn write_policy<W: Write>(
    mut out: W,
    params: &ModelParams,
    objective: Objective,
    policy: &Policy,
    values: &ValueFunction,
) -> Result<()> {
    let space = params.space()?;
    if policy.space() != &space || values.space() != &space {
        return Err(Error::DimensionMismatch(
            "policy, values and parameters disagree on the state space".into(),
        ));
    }
    let io = |e| Error::io("<policy output>", e);
    writeln!(
        out,
        "{MAGIC} tq={} epsilon={} mu_b={} delta_max={} bucket={} discount={} objective={}",
        params.query_period,
        params.erasure_prob,
        params.token_rate,
        params.max_age,
        params.bucket_capacity,
        params.discount,
        objective
    )
    .map_err(io)?;
    writeln!(out, "{POLICY_HEADER}").map_err(io)?;
    for (i, ((s, a), v)) in space
        .iter()
        .zip(policy.actions())
        .zip(values.values())
        .enumerate()
    {
        writeln!(
            out,
            "{i},{},{},{},{},{v}",
            s.age,
            s.slots_to_query,
            s.tokens,
            a.as_u8()
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_policy(
    path: &Path,
    params: &ModelParams,
    objective: Objective,
    policy: &Policy,
    values: &ValueFunction,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_policy(BufWriter::new(file), params, objective, policy, values).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_policy(path: &Path) -> Result<PolicyFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_policy(BufReader::new(file), path)
}

/// Parses a policy file; `origin` only labels error messages.
pub fn read_policy<R: BufRead>(input: R, origin: &Path) -> Result<PolicyFile> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| -> Result<Option<(usize, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((n, Ok(text))) => Ok(Some((n, text))),
            Some((n, Err(e))) => Err(err(n, format!("reading {what}: {e}"))),
        }
    };

    let (n, header) = next_line("header")?.ok_or_else(|| err(1, "empty policy file".into()))?;
    let (params, objective) = parse_header(&header).map_err(|m| err(n, m))?;
    let space = params.space().map_err(|e| err(n, e.to_string()))?;

    let (n, columns) =
        next_line("column names")?.ok_or_else(|| err(2, "missing column header".into()))?;
    if columns.trim() != POLICY_HEADER {
        return Err(err(
            n,
            format!("expected column header {POLICY_HEADER:?}, found {columns:?}"),
        ));
    }

    let mut actions = Vec::with_capacity(space.len());
    let mut values = Vec::with_capacity(space.len());
    let mut expected = space.iter();
    while let Some((n, row)) = next_line("row")? {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(n, format!("expected 6 fields, found {}", fields.len())));
        }
        let int = |k: usize, name: &str| -> Result<usize> {
            fields[k].parse().map_err(|_| {
                err(
                    n,
                    format!(
                        "field {} ({name}): {:?} is not an integer",
                        k + 1,
                        fields[k]
                    ),
                )
            })
        };
        let index = int(0, "index")?;
        let Some(s) = expected.next() else {
            return Err(err(
                n,
                format!(
                    "more rows than the {} states of the header's model",
                    space.len()
                ),
            ));
        };
        if index != actions.len()
            || (int(1, "age")?, int(2, "sigma")?, int(3, "tokens")?)
                != (s.age, s.slots_to_query, s.tokens)
        {
            return Err(err(
                n,
                format!("row does not match dense state {} = {s}", actions.len()),
            ));
        }
        let action = u8::try_from(int(4, "action")?)
            .ok()
            .and_then(Action::from_u8)
            .ok_or_else(|| {
                err(
                    n,
                    format!("field 5 (action): {:?} is not 0 or 1", fields[4]),
                )
            })?;
        if action == Action::Transmit && s.tokens == 0 {
            return Err(err(
                n,
                format!("Transmit assigned to {s} with an empty bucket"),
            ));
        }
        let value: f64 = fields[5]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| {
                err(
                    n,
                    format!("field 6 (value): {:?} is not a finite number", fields[5]),
                )
            })?;
        actions.push(action);
        values.push(value);
    }
    if actions.len() != space.len() {
        return Err(err(
            actions.len() + 2,
            format!(
                "file ends after {} of {} states",
                actions.len(),
                space.len()
            ),
        ));
    }
    Ok(PolicyFile {
        params,
        objective,
        policy: Policy::from_actions(space, actions)?,
        values: ValueFunction::from_values(space, values)?,
    })
}

fn parse_header(line: &str) -> std::result::Result<(ModelParams, Objective), String> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| format!("expected a line starting with {MAGIC:?}"))?;
    let mut fields = std::collections::BTreeMap::new();
    for token in rest.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {token:?}"))?;
        if fields.insert(k, v).is_some() {
            return Err(format!("duplicate header field {k:?}"));
        }
    }
    let mut take = |k: &str| {
        fields
            .remove(k)
            .ok_or_else(|| format!("header lacks {k:?}"))
    };
    let int = |k: &str, v: &str| {
        v.parse::<usize>()
            .map_err(|_| format!("{k}: {v:?} is not an integer"))
    };
    let real = |k: &str, v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("{k}: {v:?} is not a number"))
    };
    let params = ModelParams {
        query_period: int("tq", take("tq")?)?,
        erasure_prob: real("epsilon", take("epsilon")?)?,
        token_rate: real("mu_b", take("mu_b")?)?,
        max_age: int("delta_max", take("delta_max")?)?,
        bucket_capacity: int("bucket", take("bucket")?)?,
        discount: real("discount", take("discount")?)?,
    };
    let objective = take("objective")?
        .parse::<Objective>()
        .map_err(|e| e.to_string())?;
    if let Some(k) = fields.keys().next() {
        return Err(format!("unknown header field {k:?}"));
    }
    Ok((params, objective))
}
